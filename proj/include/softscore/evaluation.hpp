#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "softscore/optimizer.hpp"
#include "softscore/score_model.hpp"

namespace softscore {

// Labels are +1 (death) / -1 (survival). A subject is predicted positive when
// its score is >= the cutoff.

struct RocPoint {
    double cutoff = std::numeric_limits<double>::infinity();
    double sensitivity = 0.0;
    double specificity = 1.0;
    std::optional<double> precision;  // undefined when nothing is predicted positive
    std::size_t true_positives = 0;
    std::size_t false_positives = 0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // starts at cutoff +inf, one point per distinct score
    double auc = 0.0;
};

struct CutoffMetric {
    double value = 0.0;
    double cutoff = 0.0;
};

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// All of the following throw ValidationError unless both labels are present.
RocCurve roc_and_auc(std::span<const double> scores, std::span<const int> labels);
CutoffMetric youden(std::span<const double> scores, std::span<const int> labels);
CutoffMetric prec_rec_balance(std::span<const double> scores, std::span<const int> labels);

ConfusionCounts confusion_at(std::span<const double> scores, std::span<const int> labels, double cutoff);

// Mean squared error between probability and the 0/1 outcome.
double brier(std::span<const double> probabilities, std::span<const int> labels);

// pi(s) = 1 / (1 + exp(A s + B))
struct PlattCoefficients {
    double a = 0.0;
    double b = 0.0;
    double apply(double score) const;
};

PlattCoefficients platt_scale(std::span<const double> scores, std::span<const int> labels);

struct FoldSpec {
    enum class Kind { LeaveOneOut, KFold };
    Kind kind = Kind::KFold;
    int k = 10;

    static FoldSpec leave_one_out() { return {Kind::LeaveOneOut, 0}; }
    static FoldSpec k_fold(int k) { return {Kind::KFold, k}; }
    // "loo" or a positive integer.
    static FoldSpec parse(const std::string& text);
};

// Stratified, seeded fold index per record. Every training split contains both
// labels; assignments are redrawn up to 100 times before ValidationError.
std::vector<int> assign_folds(std::span<const int> labels, const FoldSpec& spec, std::uint64_t seed);

struct Prediction {
    std::size_t record = 0;  // index into the evaluated cohort
    std::string id;
    int fold = 0;
    double score = 0.0;
    double probability = 0.0;
    int label = 0;
};

struct FoldRow {
    int fold = 0;
    std::size_t n = 0;
    std::size_t positives = 0;
    std::optional<double> auc;
    std::optional<CutoffMetric> youden;
    std::optional<CutoffMetric> prec_rec;
    double brier = 0.0;
    std::optional<PlattCoefficients> platt;
};

struct EvaluationReport {
    std::optional<std::string> subgroup;
    std::size_t n = 0;
    std::size_t positives = 0;
    // Pooled over all predictions; discrimination uses the calibrated probabilities.
    double auc = 0.0;
    CutoffMetric youden;
    CutoffMetric prec_rec;
    double brier = 0.0;
    std::optional<PlattCoefficients> platt;  // set when a single calibration map applies
    std::vector<FoldRow> folds;
    // Means over folds where the metric is defined.
    std::optional<double> mean_fold_auc;
    std::optional<double> mean_fold_brier;
    std::vector<RocPoint> roc;
};

EvaluationReport evaluate_predictions(std::span<const Prediction> predictions);

using Scorer = std::function<double(const PatientRecord&)>;
using Trainer = std::function<Scorer(std::span<const PatientRecord> train)>;

struct CvResult {
    EvaluationReport report;
    std::vector<Prediction> predictions;  // in cohort order
};

// Recomputes metrics on the predictions whose record satisfies the predicate,
// without refitting. cohort is the cohort the predictions index into.
EvaluationReport evaluate_subgroup(const CvResult& result, std::span<const PatientRecord> cohort,
                                   const std::function<bool(const PatientRecord&)>& predicate,
                                   const std::string& label);

// Trains on each training split, Platt-calibrates on the training scores, and
// scores the held-out records. Folds may run on up to `parallel` threads.
CvResult cross_validate_with(std::span<const PatientRecord> cohort, const FoldSpec& folds, std::uint64_t seed,
                             const Trainer& trainer, int parallel = 1);

// Soft-threshold model fitted per fold; seed taken from config.seed.
CvResult cross_validate(std::span<const PatientRecord> cohort, const ScoreDefinition& def,
                        const OptimizerConfig& config, const FoldSpec& folds, int parallel = 1);

// Stepwise baseline: no fitting beyond the per-fold Platt map.
CvResult cross_validate_hard(std::span<const PatientRecord> cohort, const ScoreDefinition& def,
                             const FoldSpec& folds, std::uint64_t seed, int parallel = 1);

// Scores a whole cohort with one model, Platt map fitted on the same cohort.
CvResult evaluate_scorer(std::span<const PatientRecord> cohort, const Scorer& scorer);

std::vector<int> labels_of(std::span<const PatientRecord> cohort);

nlohmann::json report_to_json(const EvaluationReport& report);
// id,fold,score,probability,label
std::string predictions_csv(std::span<const Prediction> predictions);

}  // namespace softscore
