#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "mrdust_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(MRDUST_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write(const std::string& name, const std::string& text) {
    fs::create_directories(kWork);
    const auto p = kWork / name;
    std::ofstream(p) << text;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

bool same_tree(const fs::path& a, const fs::path& b) {
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) return false;
    }
    return true;
}

const std::string kConfig = R"(seed = 5
[coil]
outer_width_um = 630
layers = 2
layer_z_offsets_um = 0, -3
[voxel]
width_mm = 2
grid_n = 12
[sequence]
te_ms = 65
[physics]
current_ua = 200
[sweep]
axis = te
values = 30, 50, 70
[uplink]
nx = 4
ny = 4
implant_x = 1
implant_y = 2
target_cnr = 8
)";

}  // namespace

TEST_CASE("subcommands, sidecars and determinism") {
    fs::remove_all(kWork);
    const auto cfg = write("c.ini", kConfig);
    write("bits.txt", "0110100111010010\n");
    for (const std::string sub : {"field", "sweep", "sequence"}) {
        const auto a = kWork / (sub + "_a"), b = kWork / (sub + "_b");
        CHECK(run("--threads 1 --config " + cfg.string() + " --out " + a.string() + " " + sub) == 0);
        CHECK(run("--threads 3 --config " + (a / "run.json").string() + " --out " + b.string() + " " + sub) == 0);
        CHECK(same_tree(a, b));
        CHECK(fs::exists(a / "run.json"));
    }
    const auto ua = kWork / "up_a", ub = kWork / "up_b";
    const auto bits = (kWork / "bits.txt").string();
    CHECK(run("--threads 1 --config " + cfg.string() + " --out " + ua.string() + " uplink " + bits) == 0);
    CHECK(run("--threads 2 --config " + (ua / "run.json").string() + " --out " + ub.string() + " uplink " + bits) == 0);
    CHECK(same_tree(ua, ub));
    const auto report = slurp(ua / "report.json");
    CHECK(report.find("\"located_implant\": true") != std::string::npos);
    CHECK(slurp(ua / "decoded.txt") == "0110100111010010\n");

    CHECK(run("--out " + (kWork / "det").string() + " detect " + (ua / "stack").string()) == 0);
    CHECK(slurp(kWork / "det" / "tmap.csv").starts_with("ix,iy,t,p,dof\n"));
    CHECK(slurp(kWork / "det" / "detection.json").find("\"detected\": true") != std::string::npos);
    CHECK(run("--seed 6 --config " + cfg.string() + " --out " + (kWork / "seed6").string() + " sweep") == 0);
    CHECK(slurp(kWork / "seed6" / "run.json").find("\"seed\": 6") != std::string::npos);
}

TEST_CASE("field at zero current is zero") {
    const auto cfg = write("zero.ini", "[coil]\nturns = 4\n[voxel]\ngrid_n = 3\n[physics]\ncurrent_ua = 0\n");
    const auto out = kWork / "zero";
    REQUIRE(run("--config " + cfg.string() + " --out " + out.string() + " field") == 0);
    std::ifstream in(out / "field.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "x_um,y_um,z_um,bz_per_amp_T,bz_T");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        CHECK(line.ends_with(",0.000000000e+00"));
    }
    CHECK(rows == 27);
}

TEST_CASE("exit codes") {
    const auto cfg = write("c2.ini", kConfig);
    CHECK(run("--config " + write("unit.ini", "[coil]\nouter_width_mm = 1\n[voxel]\n").string() + " field") == 2);
    CHECK(run("--config " + write("nosweep.ini", "[coil]\nturns = 4\n").string() + " sweep") == 2);
    CHECK(run("--config " + write("empty.ini", "[sweep]\naxis = te\n").string() + " sweep") == 2);
    CHECK(run("--config " + write("geom.ini", "[coil]\nturns = 40\n[voxel]\ngrid_n = 2\n").string() + " --out " +
              (kWork / "g").string() + " field") == 3);
    CHECK(run("--config " + cfg.string() + " --out " + (kWork / "bad").string() + " uplink " +
              write("bad.txt", "01x1\n").string()) == 2);
    CHECK(run("frobnicate") == 2);

    const auto stack = kWork / "thin";
    fs::create_directories(stack);
    std::ofstream(stack / "frame_000000.csv") << "1,2\n";
    std::ofstream(stack / "frame_000001.csv") << "1,2\n";
    std::ofstream(stack / "frame_000002.csv") << "1,2\n";
    std::ofstream(stack / "manifest.json")
        << R"({"format":"mrdust-image-stack","version":"0.3.1","nx":2,"ny":1,"labels":[0,1,1],"params":{},"seed":1,)"
        << R"("frames":["frame_000000.csv","frame_000001.csv","frame_000002.csv"]})";
    CHECK(run("--out " + (kWork / "thin_out").string() + " detect " + stack.string()) == 4);
}

TEST_CASE("noise-only stack is not detected") {
    const auto stack = kWork / "null";
    fs::create_directories(stack);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(1.0, 0.05);
    std::string frames, labels;
    for (int k = 0; k < 40; ++k) {
        const auto name = "frame_" + std::string(6 - std::to_string(k).size(), '0') + std::to_string(k) + ".csv";
        std::ofstream f(stack / name);
        for (int iy = 0; iy < 6; ++iy)
            for (int ix = 0; ix < 6; ++ix) f << noise(rng) << (ix == 5 ? "\n" : ",");
        frames += (k ? ",\"" : "\"") + name + "\"";
        labels += (k ? "," : "") + std::to_string(k % 2);
    }
    std::ofstream(stack / "manifest.json") << R"({"format":"mrdust-image-stack","version":"0.3.1","nx":6,"ny":6,"labels":[)"
                                           << labels << R"(],"params":{},"seed":4,"frames":[)" << frames << "]}";
    REQUIRE(run("--out " + (kWork / "null_det").string() + " detect " + stack.string()) == 0);
    CHECK(slurp(kWork / "null_det" / "detection.json").find("\"detected\": false") != std::string::npos);
}
