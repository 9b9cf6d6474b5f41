#include "softscore/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <thread>

#include "softscore/errors.hpp"
#include "softscore/io.hpp"
#include "softscore/numeric.hpp"
#include "softscore/random.hpp"

namespace softscore {

namespace {

struct ClassCounts {
    std::size_t pos = 0;
    std::size_t neg = 0;
};

ClassCounts check_labels(std::span<const double> scores, std::span<const int> labels)
{
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    ClassCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) ++c.pos;
        else if (labels[i] == -1) ++c.neg;
        else throw ValidationError("labels must be +1 or -1");
        if (!std::isfinite(scores[i])) throw ValidationError("scores must be finite");
    }
    if (c.pos == 0 || c.neg == 0) throw ValidationError("both outcome classes must be present");
    return c;
}

// a/b >= c/d for non-negative integers with positive denominators.
bool fraction_ge(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d)
{
    return static_cast<unsigned __int128>(a) * d >= static_cast<unsigned __int128>(c) * b;
}

}  // namespace

RocCurve roc_and_auc(std::span<const double> scores, std::span<const int> labels)
{
    const auto counts = check_labels(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back(RocPoint{});
    std::uint64_t tp = 0, fp = 0, twice_area = 0;
    for (std::size_t g = 0; g < order.size();) {
        const double cutoff = scores[order[g]];
        const std::uint64_t tp0 = tp, fp0 = fp;
        while (g < order.size() && scores[order[g]] == cutoff) {
            (labels[order[g]] == 1 ? tp : fp) += 1;
            ++g;
        }
        twice_area += (fp - fp0) * (tp + tp0);
        RocPoint p;
        p.cutoff = cutoff;
        p.true_positives = tp;
        p.false_positives = fp;
        p.sensitivity = static_cast<double>(tp) / static_cast<double>(counts.pos);
        p.specificity = static_cast<double>(counts.neg - fp) / static_cast<double>(counts.neg);
        p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        curve.points.push_back(p);
    }
    curve.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(counts.pos) * static_cast<double>(counts.neg));
    return curve;
}

CutoffMetric youden(std::span<const double> scores, std::span<const int> labels)
{
    const auto counts = check_labels(scores, labels);
    const auto curve = roc_and_auc(scores, labels);
    // J * P * N = tp * N - fp * P, compared exactly in integers.
    const auto P = static_cast<std::int64_t>(counts.pos), N = static_cast<std::int64_t>(counts.neg);
    std::int64_t best = std::numeric_limits<std::int64_t>::min();
    double cutoff = 0.0;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const auto& p = curve.points[k];
        const std::int64_t key = static_cast<std::int64_t>(p.true_positives) * N - static_cast<std::int64_t>(p.false_positives) * P;
        if (key >= best) {
            best = key;
            cutoff = p.cutoff;
        }
    }
    return {static_cast<double>(best) / (static_cast<double>(P) * static_cast<double>(N)), cutoff};
}

CutoffMetric prec_rec_balance(std::span<const double> scores, std::span<const int> labels)
{
    const auto counts = check_labels(scores, labels);
    const auto curve = roc_and_auc(scores, labels);
    std::uint64_t best_num = 0, best_den = 1;
    bool have = false;
    double cutoff = 0.0;
    for (std::size_t k = 1; k < curve.points.size(); ++k) {
        const auto& p = curve.points[k];
        const std::uint64_t tp = p.true_positives, predicted = p.true_positives + p.false_positives;
        // min(tp / predicted, tp / P)
        std::uint64_t num = tp, den = std::max<std::uint64_t>(predicted, counts.pos);
        if (!have || fraction_ge(num, den, best_num, best_den)) {
            best_num = num;
            best_den = den;
            cutoff = p.cutoff;
            have = true;
        }
    }
    return {static_cast<double>(best_num) / static_cast<double>(best_den), cutoff};
}

ConfusionCounts confusion_at(std::span<const double> scores, std::span<const int> labels, double cutoff)
{
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
    ConfusionCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted = scores[i] >= cutoff;
        if (labels[i] == 1) (predicted ? c.tp : c.fn) += 1;
        else (predicted ? c.fp : c.tn) += 1;
    }
    return c;
}

double brier(std::span<const double> probabilities, std::span<const int> labels)
{
    if (probabilities.size() != labels.size()) throw std::invalid_argument("probabilities and labels differ in length");
    if (probabilities.empty()) throw ValidationError("Brier score of an empty set");
    double total = 0.0;
    for (std::size_t k = 0; k < probabilities.size(); ++k) {
        const double p = probabilities[k];
        if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("probabilities must lie in [0, 1]");
        if (labels[k] != 1 && labels[k] != -1) throw ValidationError("labels must be +1 or -1");
        const double c = labels[k] == 1 ? 1.0 : 0.0;
        total += (p - c) * (p - c);
    }
    return total / static_cast<double>(probabilities.size());
}

double PlattCoefficients::apply(double score) const { return numeric::sigmoid(-(a * score + b)); }

PlattCoefficients platt_scale(std::span<const double> scores, std::span<const int> labels)
{
    const auto counts = check_labels(scores, labels);
    const std::size_t n = scores.size();

    // Fit on standardized scores, then map back.
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    double sd = std::sqrt(var / static_cast<double>(n));
    if (!(sd > 0.0)) sd = 1.0;
    std::vector<double> u(n), t(n);
    for (std::size_t k = 0; k < n; ++k) {
        u[k] = (scores[k] - mean) / sd;
        t[k] = labels[k] == 1 ? 1.0 : 0.0;
    }

    auto nll = [&](double a, double b) {
        double f = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double lin = a * u[k] + b;
            f += t[k] * numeric::log1p_exp(lin) + (1.0 - t[k]) * numeric::log1p_exp(-lin);
        }
        return f;
    };

    double a = 0.0;
    double b = std::log((static_cast<double>(counts.neg) + 1.0) / (static_cast<double>(counts.pos) + 1.0));
    double f = nll(a, b);
    constexpr double tol = 1e-8;
    for (int iter = 0; iter < 100; ++iter) {
        double ga = 0.0, gb = 0.0, haa = 0.0, hab = 0.0, hbb = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double p = numeric::sigmoid(-(a * u[k] + b));
            const double r = t[k] - p;
            ga += r * u[k];
            gb += r;
            const double wgt = p * (1.0 - p);
            haa += wgt * u[k] * u[k];
            hab += wgt * u[k];
            hbb += wgt;
        }
        if (std::max(std::abs(ga), std::abs(gb)) < tol * static_cast<double>(n)) {
            return {a / sd, b - a * mean / sd};
        }
        // Levenberg damping keeps the system solvable for constant scores.
        const double damp = 1e-12 * (haa + hbb) + 1e-300;
        haa += damp;
        hbb += damp;
        const double det = haa * hbb - hab * hab;
        double da = -(hbb * ga - hab * gb) / det;
        double db = -(haa * gb - hab * ga) / det;
        double step = 1.0;
        double f_new = nll(a + da, b + db);
        while (!(f_new <= f) && step > 1e-10) {
            step *= 0.5;
            f_new = nll(a + step * da, b + step * db);
        }
        if (!(f_new <= f)) break;
        a += step * da;
        b += step * db;
        f = f_new;
        if (std::max(std::abs(step * da), std::abs(step * db)) < tol) return {a / sd, b - a * mean / sd};
    }
    throw NumericError("Platt scaling did not converge in 100 iterations (separable scores?)");
}

FoldSpec FoldSpec::parse(const std::string& text)
{
    if (text == "loo") return leave_one_out();
    int k = 0;
    try {
        std::size_t used = 0;
        k = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
        throw ValidationError("folds must be 'loo' or an integer (got '" + text + "')");
    }
    if (k < 2) throw ValidationError("k-fold cross-validation needs k >= 2");
    return k_fold(k);
}

std::vector<int> assign_folds(std::span<const int> labels, const FoldSpec& spec, std::uint64_t seed)
{
    const std::size_t n = labels.size();
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (labels[i] == 1 ? pos : neg).push_back(i);
    if (pos.size() + neg.size() != n) throw ValidationError("labels must be +1 or -1");
    const std::size_t k = spec.kind == FoldSpec::Kind::LeaveOneOut ? n : static_cast<std::size_t>(spec.k);
    if (k < 2 || k > n) throw ValidationError("number of folds must lie in [2, n]");

    Rng rng(seed);
    std::vector<int> fold(n, 0);
    for (int attempt = 0; attempt < 100; ++attempt) {
        if (spec.kind == FoldSpec::Kind::LeaveOneOut) {
            std::iota(fold.begin(), fold.end(), 0);
        } else {
            rng.shuffle(pos);
            rng.shuffle(neg);
            std::size_t slot = 0;
            for (auto i : pos) fold[i] = static_cast<int>(slot++ % k);
            for (auto i : neg) fold[i] = static_cast<int>(slot++ % k);
        }
        std::vector<std::size_t> pos_in(k, 0), neg_in(k, 0);
        for (std::size_t i = 0; i < n; ++i) (labels[i] == 1 ? pos_in : neg_in)[static_cast<std::size_t>(fold[i])] += 1;
        bool ok = true;
        for (std::size_t f = 0; f < k && ok; ++f) ok = pos.size() > pos_in[f] && neg.size() > neg_in[f];
        if (ok) return fold;
        if (spec.kind == FoldSpec::Kind::LeaveOneOut) break;
    }
    throw ValidationError("cannot stratify folds so that every training split holds both outcomes");
}

std::vector<int> labels_of(std::span<const PatientRecord> cohort)
{
    std::vector<int> y;
    y.reserve(cohort.size());
    for (const auto& r : cohort) y.push_back(static_cast<int>(r.outcome));
    return y;
}

namespace {

bool both_classes(std::span<const int> labels)
{
    bool pos = false, neg = false;
    for (int y : labels) (y == 1 ? pos : neg) = true;
    return pos && neg;
}

}  // namespace

EvaluationReport evaluate_predictions(std::span<const Prediction> predictions)
{
    if (predictions.empty()) throw ValidationError("no predictions to evaluate");
    std::vector<double> probs, scores;
    std::vector<int> labels;
    for (const auto& p : predictions) {
        probs.push_back(p.probability);
        scores.push_back(p.score);
        labels.push_back(p.label);
    }
    EvaluationReport rep;
    const auto curve = roc_and_auc(probs, labels);
    rep.n = predictions.size();
    rep.positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    rep.auc = curve.auc;
    rep.roc = curve.points;
    rep.youden = youden(probs, labels);
    rep.prec_rec = prec_rec_balance(probs, labels);
    rep.brier = brier(probs, labels);

    std::map<int, std::vector<std::size_t>> by_fold;
    for (std::size_t k = 0; k < predictions.size(); ++k) by_fold[predictions[k].fold].push_back(k);
    double auc_sum = 0.0, brier_sum = 0.0;
    std::size_t auc_count = 0;
    for (const auto& [fold, members] : by_fold) {
        FoldRow row;
        row.fold = fold;
        row.n = members.size();
        std::vector<double> fp;
        std::vector<int> fl;
        for (auto k : members) {
            fp.push_back(probs[k]);
            fl.push_back(labels[k]);
        }
        row.positives = static_cast<std::size_t>(std::count(fl.begin(), fl.end(), 1));
        if (both_classes(fl)) {
            row.auc = roc_and_auc(fp, fl).auc;
            row.youden = youden(fp, fl);
            row.prec_rec = prec_rec_balance(fp, fl);
            auc_sum += *row.auc;
            ++auc_count;
        }
        row.brier = brier(fp, fl);
        brier_sum += row.brier;
        rep.folds.push_back(row);
    }
    if (auc_count > 0) rep.mean_fold_auc = auc_sum / static_cast<double>(auc_count);
    rep.mean_fold_brier = brier_sum / static_cast<double>(rep.folds.size());
    return rep;
}

EvaluationReport evaluate_subgroup(const CvResult& result, std::span<const PatientRecord> cohort,
                                   const std::function<bool(const PatientRecord&)>& predicate,
                                   const std::string& label)
{
    std::vector<Prediction> kept;
    for (const auto& p : result.predictions) {
        if (p.record >= cohort.size()) throw std::invalid_argument("prediction refers to a record outside the cohort");
        if (predicate(cohort[p.record])) kept.push_back(p);
    }
    if (kept.empty()) throw ValidationError("subgroup '" + label + "' selects no records");
    std::vector<int> kept_labels;
    for (const auto& p : kept) kept_labels.push_back(p.label);
    if (!both_classes(kept_labels)) {
        throw ValidationError("subgroup '" + label + "' does not contain both outcomes");
    }
    auto rep = evaluate_predictions(kept);
    rep.subgroup = label;
    // Calibration maps were fitted on training data and stay as they were.
    rep.platt = result.report.platt;
    for (auto& row : rep.folds) {
        for (const auto& full : result.report.folds) {
            if (full.fold == row.fold) row.platt = full.platt;
        }
    }
    return rep;
}

CvResult cross_validate_with(std::span<const PatientRecord> cohort, const FoldSpec& folds, std::uint64_t seed,
                             const Trainer& trainer, int parallel)
{
    const auto labels = labels_of(cohort);
    const auto fold = assign_folds(labels, folds, seed);
    const int n_folds = *std::max_element(fold.begin(), fold.end()) + 1;

    std::vector<Prediction> predictions(cohort.size());
    std::vector<PlattCoefficients> platts(static_cast<std::size_t>(n_folds));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_folds));

    auto run_fold = [&](int f) {
        try {
            std::vector<PatientRecord> train;
            std::vector<std::size_t> test;
            for (std::size_t i = 0; i < cohort.size(); ++i) {
                if (fold[i] == f) test.push_back(i);
                else train.push_back(cohort[i]);
            }
            const Scorer scorer = trainer(train);
            std::vector<double> train_scores;
            train_scores.reserve(train.size());
            for (const auto& r : train) train_scores.push_back(scorer(r));
            const auto platt = platt_scale(train_scores, labels_of(train));
            platts[static_cast<std::size_t>(f)] = platt;
            for (auto i : test) {
                Prediction& p = predictions[i];
                p.record = i;
                p.id = cohort[i].id;
                p.fold = f;
                p.score = scorer(cohort[i]);
                p.probability = platt.apply(p.score);
                p.label = labels[i];
            }
        } catch (...) {
            errors[static_cast<std::size_t>(f)] = std::current_exception();
        }
    };

    const int workers = std::clamp(parallel, 1, n_folds);
    if (workers == 1) {
        for (int f = 0; f < n_folds; ++f) run_fold(f);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (int f = next++; f < n_folds; f = next++) run_fold(f);
            });
        }
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    CvResult result;
    result.report = evaluate_predictions(predictions);
    for (auto& row : result.report.folds) row.platt = platts[static_cast<std::size_t>(row.fold)];
    result.predictions = std::move(predictions);
    return result;
}

CvResult cross_validate(std::span<const PatientRecord> cohort, const ScoreDefinition& def,
                        const OptimizerConfig& config, const FoldSpec& folds, int parallel)
{
    config.validate(def.weight_count());
    const Trainer trainer = [&def, &config](std::span<const PatientRecord> train) -> Scorer {
        auto fitted = fit(train, def, config);
        return [&def, params = std::move(fitted.params)](const PatientRecord& r) { return soft_score(r, def, params); };
    };
    return cross_validate_with(cohort, folds, config.seed, trainer, parallel);
}

CvResult cross_validate_hard(std::span<const PatientRecord> cohort, const ScoreDefinition& def,
                             const FoldSpec& folds, std::uint64_t seed, int parallel)
{
    const Trainer trainer = [&def](std::span<const PatientRecord>) -> Scorer {
        return [&def](const PatientRecord& r) { return hard_score(r, def); };
    };
    return cross_validate_with(cohort, folds, seed, trainer, parallel);
}

CvResult evaluate_scorer(std::span<const PatientRecord> cohort, const Scorer& scorer)
{
    const auto labels = labels_of(cohort);
    std::vector<double> scores;
    for (const auto& r : cohort) scores.push_back(scorer(r));
    const auto platt = platt_scale(scores, labels);
    CvResult result;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        result.predictions.push_back({i, cohort[i].id, 0, scores[i], platt.apply(scores[i]), labels[i]});
    }
    result.report = evaluate_predictions(result.predictions);
    result.report.platt = platt;
    for (auto& row : result.report.folds) row.platt = platt;
    return result;
}

nlohmann::json report_to_json(const EvaluationReport& report)
{
    using nlohmann::json;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    auto cutoff_json = [](const CutoffMetric& m, const char* name) { return json{{name, m.value}, {"cutoff", m.cutoff}}; };
    auto platt_json = [](const std::optional<PlattCoefficients>& p) {
        return p ? json{{"a", p->a}, {"b", p->b}} : json(nullptr);
    };
    json doc;
    doc["subgroup"] = report.subgroup ? json(*report.subgroup) : json(nullptr);
    doc["n"] = report.n;
    doc["positives"] = report.positives;
    doc["auc"] = report.auc;
    doc["youden"] = cutoff_json(report.youden, "j");
    doc["prec_rec"] = cutoff_json(report.prec_rec, "value");
    doc["brier"] = report.brier;
    doc["platt"] = platt_json(report.platt);
    doc["mean_fold_auc"] = opt(report.mean_fold_auc);
    doc["mean_fold_brier"] = opt(report.mean_fold_brier);
    doc["folds"] = json::array();
    for (const auto& row : report.folds) {
        doc["folds"].push_back({{"fold", row.fold},
                                {"n", row.n},
                                {"positives", row.positives},
                                {"auc", opt(row.auc)},
                                {"youden", row.youden ? cutoff_json(*row.youden, "j") : json(nullptr)},
                                {"prec_rec", row.prec_rec ? cutoff_json(*row.prec_rec, "value") : json(nullptr)},
                                {"brier", row.brier},
                                {"platt", platt_json(row.platt)}});
    }
    doc["roc"] = json::array();
    for (const auto& p : report.roc) {
        doc["roc"].push_back({{"cutoff", std::isfinite(p.cutoff) ? json(p.cutoff) : json(nullptr)},
                              {"sensitivity", p.sensitivity},
                              {"specificity", p.specificity},
                              {"precision", opt(p.precision)}});
    }
    return doc;
}

std::string predictions_csv(std::span<const Prediction> predictions)
{
    std::string out = "id,fold,score,probability,label\n";
    for (const auto& p : predictions) {
        out += p.id + "," + std::to_string(p.fold) + "," + io::format_double(p.score) + "," +
               io::format_double(p.probability) + "," + std::to_string(p.label) + "\n";
    }
    return out;
}

}  // namespace softscore
