#include "softscore/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "softscore/errors.hpp"
#include "softscore/evaluation.hpp"
#include "softscore/imputation.hpp"
#include "softscore/io.hpp"
#include "softscore/synthetic.hpp"

namespace softscore::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(const std::string& data)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return ss.str();
}

OptimizerConfig optimizer_config_from_json(const json& doc)
{
    static const std::vector<std::string> allowed = {"optimize", "alpha", "beta", "beta_thresholds", "prior_mu",
                                                     "prior_lambda", "a_init", "max_outer_iters", "rel_tol",
                                                     "seed", "fit_intercept", "max_halvings"};
    if (!doc.is_object()) throw ValidationError("optimizer config: expected an object");
    for (const auto& [key, value] : doc.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ValidationError("optimizer config: unknown key '" + key + "'");
        }
    }
    OptimizerConfig cfg;
    auto num = [&](const char* key, double& target) {
        if (!doc.contains(key)) return;
        if (!doc[key].is_number()) throw ValidationError(std::string("optimizer config: '") + key + "' must be a number");
        target = doc[key].get<double>();
    };
    auto integer = [&](const char* key, int& target) {
        if (!doc.contains(key)) return;
        if (!doc[key].is_number_integer()) throw ValidationError(std::string("optimizer config: '") + key + "' must be an integer");
        target = doc[key].get<int>();
    };
    if (doc.contains("optimize")) {
        if (!doc["optimize"].is_string()) throw ValidationError("optimizer config: 'optimize' must be a string like \"a,w\"");
        cfg.order = parse_param_kinds(doc["optimize"].get<std::string>());
    }
    num("alpha", cfg.alpha);
    num("beta", cfg.beta);
    if (doc.contains("beta_thresholds")) {
        double b = 0.0;
        num("beta_thresholds", b);
        cfg.beta_thresholds = b;
    }
    if (doc.contains("prior_mu")) {
        const auto& mu = doc["prior_mu"];
        cfg.prior_mu.clear();
        if (mu.is_number()) {
            cfg.prior_mu.push_back(mu.get<double>());
        } else if (mu.is_array()) {
            for (const auto& v : mu) {
                if (!v.is_number()) throw ValidationError("optimizer config: 'prior_mu' entries must be numbers");
                cfg.prior_mu.push_back(v.get<double>());
            }
        } else {
            throw ValidationError("optimizer config: 'prior_mu' must be a number or an array");
        }
    }
    num("prior_lambda", cfg.prior_lambda);
    num("a_init", cfg.a_init);
    integer("max_outer_iters", cfg.max_outer_iters);
    num("rel_tol", cfg.rel_tol);
    integer("max_halvings", cfg.max_halvings);
    if (doc.contains("seed")) {
        if (!doc["seed"].is_number_unsigned()) throw ValidationError("optimizer config: 'seed' must be a non-negative integer");
        cfg.seed = doc["seed"].get<std::uint64_t>();
    }
    if (doc.contains("fit_intercept")) {
        if (!doc["fit_intercept"].is_boolean()) throw ValidationError("optimizer config: 'fit_intercept' must be a boolean");
        cfg.fit_intercept = doc["fit_intercept"].get<bool>();
    }
    return cfg;
}

json optimizer_config_to_json(const OptimizerConfig& cfg)
{
    std::string order;
    for (auto k : cfg.order) order += (order.empty() ? "" : ",") + std::string(param_kind_name(k));
    json doc = {{"optimize", order},         {"alpha", cfg.alpha},
                {"beta", cfg.beta},          {"prior_lambda", cfg.prior_lambda},
                {"a_init", cfg.a_init},      {"max_outer_iters", cfg.max_outer_iters},
                {"rel_tol", cfg.rel_tol},    {"seed", cfg.seed},
                {"fit_intercept", cfg.fit_intercept}, {"max_halvings", cfg.max_halvings}};
    doc["beta_thresholds"] = cfg.beta_thresholds ? json(*cfg.beta_thresholds) : json(nullptr);
    doc["prior_mu"] = cfg.prior_mu.size() == 1 ? json(cfg.prior_mu.front()) : json(cfg.prior_mu);
    return doc;
}

namespace {

std::shared_ptr<spdlog::logger> make_logger()
{
    auto logger = spdlog::get("softscore");
    if (!logger) logger = spdlog::stderr_color_mt("softscore");
    logger->set_pattern("[%l] %v");
    const char* env = std::getenv("SOFTSCORE_LOG");
    const std::string level = env ? env : "warn";
    logger->set_level(spdlog::level::from_str(level));
    return logger;
}

// Records inputs and outputs of one command invocation.
class Manifest {
public:
    Manifest(std::string command, const std::vector<std::string>& args)
        : command_(std::move(command)), args_(args), start_(std::chrono::steady_clock::now())
    {
    }

    void input(const fs::path& path, const std::string& role)
    {
        inputs_.push_back({{"role", role}, {"path", path.string()}, {"sha256", sha256_hex(io::read_file(path))}});
    }

    void config(const fs::path& path) { configs_.push_back(path.string()); }
    void seed(std::uint64_t s) { seed_ = s; }

    void write_output(const fs::path& path, const std::string& contents)
    {
        io::write_file(path, contents);
        outputs_.push_back({{"path", path.string()}, {"sha256", sha256_hex(contents)}});
    }

    void finish(const fs::path& out_dir)
    {
        const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        const std::time_t now = std::time(nullptr);
        char stamp[32];
        std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        json doc = {{"command", command_},     {"arguments", args_},      {"tool_version", kToolVersion},
                    {"config_paths", configs_}, {"inputs", inputs_},       {"outputs", outputs_},
                    {"wall_time_seconds", elapsed}, {"finished_at", stamp}};
        doc["seed"] = seed_ ? json(*seed_) : json(nullptr);
        io::write_file(out_dir / "manifest.json", doc.dump(2) + "\n");
    }

private:
    std::string command_;
    std::vector<std::string> args_;
    std::chrono::steady_clock::time_point start_;
    json inputs_ = json::array();
    json outputs_ = json::array();
    std::vector<std::string> configs_;
    std::optional<std::uint64_t> seed_;
};

struct Options {
    std::string config;
    std::string cohort;
    std::string score_def;
    std::string fitted;
    std::string optimize;
    std::string folds = "10";
    std::string method = "knn";
    std::string model = "soft";
    std::string filter;
    std::string out;
    int k = 5;
    int parallel_folds = 1;
    double ridge_lambda = 1.0;
    std::optional<std::uint64_t> seed;
    bool hard = false;
};

std::function<bool(const PatientRecord&)> age_filter(const std::string& filter, const ScoreDefinition& def,
                                                     std::string& label)
{
    const std::string prefix = "age:";
    if (filter.rfind(prefix, 0) != 0) throw ValidationError("--filter must look like age:BAND");
    label = filter.substr(prefix.size());
    const auto band = def.band_index(label);
    if (!band) throw ValidationError("--filter: unknown age band '" + label + "'");
    return [&def, b = *band](const PatientRecord& r) { return def.band_index(r.age_months) == b; };
}

Cohort load_cohort_logged(const Options& o, const ScoreDefinition& def, Manifest& manifest, spdlog::logger& log)
{
    auto read = io::load_cohort(o.cohort, def);
    manifest.input(o.cohort, "cohort");
    for (const auto& w : read.warnings) log.warn("{}", w);
    log.info("read {} records from {}", read.records.size(), o.cohort);
    return std::move(read.records);
}

OptimizerConfig load_optimizer_config(const Options& o, Manifest& manifest)
{
    OptimizerConfig cfg;
    if (!o.config.empty()) {
        cfg = optimizer_config_from_json(io::load_json(o.config));
        manifest.config(o.config);
        manifest.input(o.config, "optimizer_config");
    }
    if (!o.optimize.empty()) cfg.order = parse_param_kinds(o.optimize);
    if (o.seed) cfg.seed = *o.seed;
    manifest.seed(cfg.seed);
    return cfg;
}

std::string trace_csv(const FitTrace& trace)
{
    std::string out = "outer_iteration,kind,block,objective_before,objective_after,step\n";
    for (const auto& s : trace.steps) {
        out += std::to_string(s.outer_iteration) + "," + param_kind_name(s.kind) + "," + std::to_string(s.block) + "," +
               io::format_double(s.objective_before) + "," + io::format_double(s.objective_after) + "," +
               io::format_double(s.step) + "\n";
    }
    return out;
}

json trace_summary(const FitTrace& trace)
{
    return {{"initial_objective", trace.initial_objective},
            {"final_objective", trace.final_objective},
            {"iterations", trace.iterations},
            {"convergence", trace.convergence},
            {"accepted_steps", trace.steps.size()},
            {"stalled_steps", trace.stalled_steps},
            {"warnings", trace.warnings}};
}

int cmd_simulate(const Options& o, Manifest& manifest, spdlog::logger& log)
{
    const fs::path config_path = o.config;
    auto cfg = generator_config_from_json(io::load_json(config_path), config_path.parent_path());
    manifest.config(config_path);
    manifest.input(config_path, "generator_config");
    if (o.seed) cfg.seed = *o.seed;
    manifest.seed(cfg.seed);
    const auto synthetic = generate(cfg);
    const fs::path out = o.out;
    manifest.write_output(out / "cohort.csv", io::format_cohort_csv(synthetic.cohort, cfg.def));
    manifest.write_output(out / "truth.csv", truth_csv(synthetic));
    std::size_t deaths = 0;
    for (const auto& r : synthetic.cohort) deaths += r.outcome == Outcome::Died;
    log.info("generated {} records, {} deaths, intercept {}", synthetic.cohort.size(), deaths, synthetic.intercept);
    return kOk;
}

int cmd_fit(const Options& o, Manifest& manifest, spdlog::logger& log)
{
    const auto def = io::load_definition(o.score_def);
    manifest.input(o.score_def, "score_definition");
    const auto cohort = load_cohort_logged(o, def, manifest, log);
    const auto cfg = load_optimizer_config(o, manifest);
    const auto result = fit(cohort, def, cfg);
    for (const auto& w : result.trace.warnings) log.warn("{}", w);
    log.info("fit finished after {} cycles ({}), objective {} -> {}", result.trace.iterations, result.trace.convergence,
             result.trace.initial_objective, result.trace.final_objective);
    auto doc = io::parameters_to_json(result.params, def);
    doc["config"] = optimizer_config_to_json(cfg);
    doc["trace"] = trace_summary(result.trace);
    const fs::path out = o.out;
    manifest.write_output(out / "fitted.json", doc.dump(2) + "\n");
    manifest.write_output(out / "trace.csv", trace_csv(result.trace));
    return kOk;
}

void write_report(const CvResult& result, const std::optional<EvaluationReport>& subgroup, const Options& o,
                  Manifest& manifest, const std::string& model)
{
    auto doc = report_to_json(subgroup ? *subgroup : result.report);
    doc["model"] = model;
    const fs::path out = o.out;
    manifest.write_output(out / "report.json", doc.dump(2) + "\n");
    manifest.write_output(out / "scores.csv", predictions_csv(result.predictions));
}

int cmd_evaluate(const Options& o, Manifest& manifest, spdlog::logger& log)
{
    const auto def = io::load_definition(o.score_def);
    manifest.input(o.score_def, "score_definition");
    const auto cohort = load_cohort_logged(o, def, manifest, log);
    if (o.hard == !o.fitted.empty()) throw ValidationError("evaluate needs exactly one of --fitted or --hard");
    CvResult result;
    std::string model;
    if (o.hard) {
        model = "hard";
        result = evaluate_scorer(cohort, [&](const PatientRecord& r) { return hard_score(r, def); });
    } else {
        model = "soft";
        const auto params = io::parameters_from_json(io::load_json(o.fitted), def);
        manifest.input(o.fitted, "fitted_parameters");
        result = evaluate_scorer(cohort, [&](const PatientRecord& r) { return soft_score(r, def, params); });
    }
    std::optional<EvaluationReport> sub;
    if (!o.filter.empty()) {
        std::string label;
        const auto pred = age_filter(o.filter, def, label);
        sub = evaluate_subgroup(result, cohort, pred, "age:" + label);
    }
    const auto& rep = sub ? *sub : result.report;
    log.info("AUC {:.4f}, Youden J {:.4f}, PrecRec {:.4f}, Brier {:.4f}", rep.auc, rep.youden.value, rep.prec_rec.value, rep.brier);
    write_report(result, sub, o, manifest, model);
    return kOk;
}

int cmd_cv(const Options& o, Manifest& manifest, spdlog::logger& log)
{
    const auto def = io::load_definition(o.score_def);
    manifest.input(o.score_def, "score_definition");
    auto cohort = load_cohort_logged(o, def, manifest, log);
    const auto folds = FoldSpec::parse(o.folds);
    if (o.parallel_folds < 1) throw ValidationError("--parallel-folds must be at least 1");
    CvResult result;
    if (o.model == "soft") {
        const auto cfg = load_optimizer_config(o, manifest);
        result = cross_validate(cohort, def, cfg, folds, o.parallel_folds);
    } else if (o.model == "hard") {
        const std::uint64_t seed = o.seed.value_or(0);
        manifest.seed(seed);
        result = cross_validate_hard(cohort, def, folds, seed, o.parallel_folds);
    } else if (o.model == "ridge") {
        const std::uint64_t seed = o.seed.value_or(0);
        manifest.seed(seed);
        // Imputation ignores outcomes, so it runs once on the whole cohort.
        cohort = impute(cohort, def, ImputationMethod::parse(o.method, o.k));
        const double lambda = o.ridge_lambda;
        const Trainer trainer = [lambda](std::span<const PatientRecord> train) -> Scorer {
            auto model = std::make_shared<RidgeBaseline>(fit_ridge_baseline(train, lambda));
            return [model](const PatientRecord& r) { return model->score(r); };
        };
        result = cross_validate_with(cohort, folds, seed, trainer, o.parallel_folds);
    } else {
        throw ValidationError("--model must be soft, hard, or ridge");
    }
    std::optional<EvaluationReport> sub;
    if (!o.filter.empty()) {
        std::string label;
        const auto pred = age_filter(o.filter, def, label);
        sub = evaluate_subgroup(result, cohort, pred, "age:" + label);
    }
    const auto& rep = sub ? *sub : result.report;
    log.info("{} folds: pooled AUC {:.4f}, Youden J {:.4f}, PrecRec {:.4f}, Brier {:.4f}", result.report.folds.size(),
             rep.auc, rep.youden.value, rep.prec_rec.value, rep.brier);
    write_report(result, sub, o, manifest, o.model);
    return kOk;
}

int cmd_impute(const Options& o, Manifest& manifest, spdlog::logger& log)
{
    const auto def = io::load_definition(o.score_def);
    manifest.input(o.score_def, "score_definition");
    const auto cohort = load_cohort_logged(o, def, manifest, log);
    const auto method = ImputationMethod::parse(o.method, o.k);
    const auto filled = impute(cohort, def, method);
    manifest.write_output(fs::path(o.out) / "cohort.csv", io::format_cohort_csv(filled, def));
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Soft-threshold clinical risk scores: simulate, fit, evaluate, cross-validate, impute"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);
    Options o;

    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { o.seed = s; }, "Random seed");
    };

    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic cohort from a generator config");
    simulate->add_option("--config", o.config, "Generator config (JSON)")->required();
    simulate->add_option("--out", o.out, "Output directory")->required();
    add_seed(simulate);

    auto* fitc = app.add_subcommand("fit", "Fit slopes, thresholds and/or weights");
    fitc->add_option("--cohort", o.cohort, "Cohort CSV")->required();
    fitc->add_option("--score-def", o.score_def, "Score definition (JSON)")->required();
    fitc->add_option("--optimize", o.optimize, "Parameter kinds in cycle order, e.g. a,w");
    fitc->add_option("--config", o.config, "Optimizer config (JSON)");
    fitc->add_option("--out", o.out, "Output directory")->required();
    add_seed(fitc);

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate fitted parameters or the stepwise score");
    evaluate->add_option("--cohort", o.cohort, "Cohort CSV")->required();
    evaluate->add_option("--score-def", o.score_def, "Score definition (JSON)")->required();
    evaluate->add_option("--fitted", o.fitted, "Fitted parameters (JSON)");
    evaluate->add_flag("--hard", o.hard, "Evaluate the stepwise (hard-threshold) score");
    evaluate->add_option("--filter", o.filter, "Restrict metrics to a subgroup, e.g. age:child");
    evaluate->add_option("--out", o.out, "Output directory")->required();

    auto* cv = app.add_subcommand("cv", "Cross-validate a model");
    cv->add_option("--cohort", o.cohort, "Cohort CSV")->required();
    cv->add_option("--score-def", o.score_def, "Score definition (JSON)")->required();
    cv->add_option("--model", o.model, "soft, hard, or ridge")->capture_default_str();
    cv->add_option("--optimize", o.optimize, "Parameter kinds for the soft model, e.g. a,w");
    cv->add_option("--config", o.config, "Optimizer config (JSON)");
    cv->add_option("--folds", o.folds, "loo or the number of folds")->capture_default_str();
    cv->add_option("--method", o.method, "Imputation for the ridge model: knn, mean, normal")->capture_default_str();
    cv->add_option("--k", o.k, "Neighbours for knn imputation")->capture_default_str();
    cv->add_option("--lambda", o.ridge_lambda, "Ridge penalty")->capture_default_str();
    cv->add_option("--filter", o.filter, "Restrict metrics to a subgroup, e.g. age:child");
    cv->add_option("--parallel-folds", o.parallel_folds, "Folds evaluated concurrently")->capture_default_str();
    cv->add_option("--out", o.out, "Output directory")->required();
    add_seed(cv);

    auto* imp = app.add_subcommand("impute", "Fill missing values");
    imp->add_option("--cohort", o.cohort, "Cohort CSV")->required();
    imp->add_option("--score-def", o.score_def, "Score definition (JSON)")->required();
    imp->add_option("--method", o.method, "knn, mean, or normal")->capture_default_str();
    imp->add_option("--k", o.k, "Neighbours for knn")->capture_default_str();
    imp->add_option("--out", o.out, "Output directory")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    }

    auto log = make_logger();
    CLI::App* cmd = app.get_subcommands().front();
    Manifest manifest(cmd->get_name(), args);
    try {
        int code = kOk;
        if (cmd == simulate) code = cmd_simulate(o, manifest, *log);
        else if (cmd == fitc) code = cmd_fit(o, manifest, *log);
        else if (cmd == evaluate) code = cmd_evaluate(o, manifest, *log);
        else if (cmd == cv) code = cmd_cv(o, manifest, *log);
        else if (cmd == imp) code = cmd_impute(o, manifest, *log);
        manifest.finish(o.out);
        return code;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kNumericError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kInputError;
    }
}

}  // namespace softscore::cli
