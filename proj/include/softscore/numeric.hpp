#pragma once

#include <algorithm>
#include <cmath>

namespace softscore::numeric {

inline constexpr double kExpClip = 500.0;

inline double clip_exponent(double u) { return std::clamp(u, -kExpClip, kExpClip); }

// 1 / (1 + exp(-u)) without overflow for either sign of u.
inline double sigmoid(double u)
{
    u = clip_exponent(u);
    if (u >= 0.0) {
        return 1.0 / (1.0 + std::exp(-u));
    }
    const double e = std::exp(u);
    return e / (1.0 + e);
}

// log(1 + exp(u)).
inline double log1p_exp(double u)
{
    if (u > 0.0) {
        return u + std::log1p(std::exp(-clip_exponent(u)));
    }
    return std::log1p(std::exp(clip_exponent(u)));
}

// sigmoid(u) * (1 - sigmoid(u)), evaluated as sigmoid(u) * sigmoid(-u).
inline double sigmoid_derivative(double u) { return sigmoid(u) * sigmoid(-u); }

}  // namespace softscore::numeric
