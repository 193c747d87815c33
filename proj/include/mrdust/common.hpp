#ifndef MRDUST_COMMON_HPP
#define MRDUST_COMMON_HPP

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrdust {

using Vec3 = Eigen::Vector3d;
using Complex = std::complex<double>;

inline constexpr double kMu0 = 4.0e-7 * std::numbers::pi;   // T·m/A
inline constexpr double kHbar = 1.054571817e-34;            // J·s
inline constexpr double kBoltzmann = 1.380649e-23;          // J/K
inline constexpr double kGammaOver2PiMHzPerT = 42.58;
inline constexpr double kGamma = 2.0 * std::numbers::pi * kGammaOver2PiMHzPerT * 1e6;  // rad/(s·T)

inline constexpr const char* kVersion = "0.3.1";

// Error categories map onto distinct CLI exit codes.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class GeometryError : public DomainError {
public:
    GeometryError(const std::string& what, int turn_index)
        : DomainError(what), turn_index_(turn_index) {}
    [[nodiscard]] int turn_index() const noexcept { return turn_index_; }

private:
    int turn_index_;
};

class DetectionFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is reproducible regardless of how callers partition work.
template <typename Scalar>
Scalar pairwise_sum(std::span<const Scalar> values) {
    constexpr std::size_t kLeaf = 8;
    const std::size_t n = values.size();
    if (n <= kLeaf) {
        Scalar acc{0};
        for (const auto& v : values) acc += v;
        return acc;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

template <typename Derived>
typename Derived::Scalar pairwise_sum(const Eigen::DenseBase<Derived>& values) {
    using Scalar = typename Derived::Scalar;
    const auto& dense = values.derived();
    static_assert(Derived::IsVectorAtCompileTime, "pairwise_sum expects a vector expression");
    if constexpr (requires { dense.data(); }) {
        return pairwise_sum(std::span<const Scalar>(dense.data(), static_cast<std::size_t>(dense.size())));
    } else {
        Eigen::Array<Scalar, Eigen::Dynamic, 1> tmp = dense;
        return pairwise_sum(std::span<const Scalar>(tmp.data(), static_cast<std::size_t>(tmp.size())));
    }
}

/// Worker count used by the per-spin and per-point parallel maps.
void set_threads(int n);
int threads();

}  // namespace mrdust

#endif  // MRDUST_COMMON_HPP
