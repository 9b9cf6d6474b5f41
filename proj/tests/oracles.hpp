#pragma once

// Brute-force reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "softscore/evaluation.hpp"
#include "support.hpp"

namespace oracles {

using namespace softscore;
using testsupport::record;

// Pair counting with half credit for ties.
inline double mann_whitney(const std::vector<double>& s, const std::vector<int>& y)
{
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != -1) continue;
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

struct Counts {
    long tp = 0, fp = 0, p = 0, n = 0;
};

inline Counts count_at(const std::vector<double>& s, const std::vector<int>& y, double c)
{
    Counts k;
    for (std::size_t i = 0; i < s.size(); ++i) {
        (y[i] == 1 ? k.p : k.n) += 1;
        if (s[i] >= c) (y[i] == 1 ? k.tp : k.fp) += 1;
    }
    return k;
}

// Exhaustive search over every distinct score used as the cutoff.
inline CutoffMetric brute_youden(const std::vector<double>& s, const std::vector<int>& y)
{
    std::set<double> cuts(s.begin(), s.end());
    long best_num = 0;
    double best_cut = 0.0;
    bool first = true;
    for (auto it = cuts.rbegin(); it != cuts.rend(); ++it) {
        const auto k = count_at(s, y, *it);
        const long num = k.tp * k.n - k.fp * k.p;  // J * P * N
        if (first || num >= best_num) {
            best_num = num;
            best_cut = *it;
            first = false;
        }
    }
    const auto k = count_at(s, y, best_cut);
    return {static_cast<double>(best_num) / static_cast<double>(k.p * k.n), best_cut};
}

inline CutoffMetric brute_prec_rec(const std::vector<double>& s, const std::vector<int>& y)
{
    std::set<double> cuts(s.begin(), s.end());
    double best = -1.0, best_cut = 0.0;
    for (auto it = cuts.rbegin(); it != cuts.rend(); ++it) {
        const auto k = count_at(s, y, *it);
        if (k.tp + k.fp == 0) continue;
        const double prec = static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp);
        const double rec = static_cast<double>(k.tp) / static_cast<double>(k.p);
        const double m = std::min(prec, rec);
        if (m >= best) {
            best = m;
            best_cut = *it;
        }
    }
    return {best, best_cut};
}


inline constexpr auto none = std::nullopt;

// Six records over (hr, sbp, gcs, pupils); one hole per variable.
inline Cohort six_records()
{
    return {
        record("r0", 20, 1, {120.0, 90.0, 15.0, 0.0}),
        record("r1", 20, -1, {150.0, none, 10.0, 0.0}),
        record("r2", 20, 1, {none, 70.0, 6.0, 1.0}),
        record("r3", 20, -1, {180.0, 60.0, none, 1.0}),
        record("r4", 20, -1, {100.0, 110.0, 14.0, none}),
        record("r5", 20, 1, {130.0, 85.0, 12.0, 0.0}),
    };
}

// All-pairs kNN written out directly from the documented rule.
inline Cohort brute_knn(const Cohort& c, const ScoreDefinition& def, std::size_t k)
{
    const std::size_t n = c.size(), nv = def.variables().size();
    std::vector<double> sd(nv);
    for (std::size_t v = 0; v < nv; ++v) {
        double sum = 0.0, cnt = 0.0;
        for (const auto& r : c)
            if (r.values[v]) sum += *r.values[v], cnt += 1;
        const double mean = sum / cnt;
        double ss = 0.0;
        for (const auto& r : c)
            if (r.values[v]) ss += (*r.values[v] - mean) * (*r.values[v] - mean);
        sd[v] = std::sqrt(ss / cnt);
        if (sd[v] == 0.0) sd[v] = 1.0;
    }
    std::vector<std::vector<double>> dist(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double ss = 0.0;
            int common = 0;
            for (std::size_t v = 0; v < nv; ++v) {
                if (!c[i].values[v] || !c[j].values[v]) continue;
                const double d = (*c[i].values[v] - *c[j].values[v]) / sd[v];
                ss += d * d;
                ++common;
            }
            dist[i][j] = common ? std::sqrt(ss) / common : std::numeric_limits<double>::infinity();
        }
    }
    Cohort out = c;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t v = 0; v < nv; ++v) {
            if (c[i].values[v]) continue;
            std::vector<std::size_t> order;
            for (std::size_t j = 0; j < n; ++j)
                if (j != i && c[j].values[v]) order.push_back(j);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return dist[i][a] < dist[i][b]; });
            double sum = 0.0;
            for (std::size_t m = 0; m < k; ++m) sum += *c[order[m]].values[v];
            double value = sum / static_cast<double>(k);
            if (def.variables()[v].kind == VariableKind::Binary) value = value >= 0.5 ? 1.0 : 0.0;
            out[i].values[v] = value;
        }
    }
    return out;
}

}  // namespace oracles
