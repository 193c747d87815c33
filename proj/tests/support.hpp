#ifndef MRDUST_TESTS_SUPPORT_HPP
#define MRDUST_TESTS_SUPPORT_HPP

#include "mrdust/magnetics.hpp"

#include <algorithm>
#include <cmath>

namespace mrdust::testing {

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

/// Closed square loop of side `a_um` centred at the origin, counter-clockwise.
inline SegmentSet square_loop(double a_um) {
    const double h = a_um / 2.0;
    const Vec3 c[4] = {{-h, -h, 0}, {h, -h, 0}, {h, h, 0}, {-h, h, 0}};
    SegmentSet s;
    for (int i = 0; i < 4; ++i) s.segments.push_back({c[i], c[(i + 1) % 4], 1, 0});
    return s;
}

}  // namespace mrdust::testing

#endif
