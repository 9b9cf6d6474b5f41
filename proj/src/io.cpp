#include "softscore/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "softscore/errors.hpp"

namespace softscore::io {

namespace {

void reject_unknown_keys(const json& obj, std::initializer_list<std::string_view> allowed, const std::string& where)
{
    if (!obj.is_object()) throw ValidationError(where + ": expected a JSON object");
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ValidationError(where + ": unknown key '" + key + "'");
        }
    }
}

const json& require(const json& obj, const std::string& key, const std::string& where)
{
    auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(where + ": missing key '" + key + "'");
    return *it;
}

double as_number(const json& v, const std::string& where)
{
    if (!v.is_number()) throw ValidationError(where + ": expected a number");
    return v.get<double>();
}

int as_int(const json& v, const std::string& where)
{
    if (!v.is_number_integer()) throw ValidationError(where + ": expected an integer");
    return v.get<int>();
}

std::string as_string(const json& v, const std::string& where)
{
    if (!v.is_string()) throw ValidationError(where + ": expected a string");
    return v.get<std::string>();
}

VariableKind parse_variable_kind(const std::string& s, const std::string& where)
{
    if (s == "max") return VariableKind::Max;
    if (s == "min") return VariableKind::Min;
    if (s == "binary") return VariableKind::Binary;
    throw ValidationError(where + ": kind must be one of max, min, binary (got '" + s + "')");
}

const char* variable_kind_name(VariableKind k)
{
    switch (k) {
    case VariableKind::Max: return "max";
    case VariableKind::Min: return "min";
    case VariableKind::Binary: return "binary";
    }
    return "?";
}

std::vector<std::string_view> split_line(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

template <class T>
bool parse_number(std::string_view s, T& out)
{
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

}  // namespace

ScoreDefinition definition_from_json(const json& doc)
{
    reject_unknown_keys(doc, {"name", "age_bands", "variables", "features", "or_weight_split"}, "score definition");
    const std::string name = as_string(require(doc, "name", "score definition"), "name");

    std::vector<AgeBand> bands;
    for (const auto& b : require(doc, "age_bands", "score definition")) {
        reject_unknown_keys(b, {"label", "min_months", "max_months"}, "age band");
        AgeBand band;
        band.label = as_string(require(b, "label", "age band"), "age band label");
        band.min_age_months = as_int(require(b, "min_months", "age band " + band.label), "min_months");
        band.max_age_months = as_int(require(b, "max_months", "age band " + band.label), "max_months");
        bands.push_back(std::move(band));
    }

    std::vector<RawVariable> variables;
    for (const auto& v : require(doc, "variables", "score definition")) {
        reject_unknown_keys(v, {"name", "kind", "unit", "range", "normal"}, "variable");
        RawVariable var;
        var.name = as_string(require(v, "name", "variable"), "variable name");
        const std::string where = "variable '" + var.name + "'";
        var.kind = parse_variable_kind(as_string(require(v, "kind", where), where), where);
        if (v.contains("unit")) var.unit = as_string(v["unit"], where + " unit");
        const auto& range = require(v, "range", where);
        if (!range.is_array() || range.size() != 2) throw ValidationError(where + ": range must be [lo, hi]");
        var.range_lo = as_number(range[0], where + " range");
        var.range_hi = as_number(range[1], where + " range");
        if (v.contains("normal") && !v["normal"].is_null()) var.normal_value = as_number(v["normal"], where + " normal");
        variables.push_back(std::move(var));
    }

    std::vector<Feature> features;
    for (const auto& f : require(doc, "features", "score definition")) {
        reject_unknown_keys(f, {"variable", "kind", "step_index", "thresholds", "weight", "or_group"}, "feature");
        Feature feat;
        const std::string var_name = as_string(require(f, "variable", "feature"), "feature variable");
        const std::string where = "feature on '" + var_name + "'";
        auto it = std::find_if(variables.begin(), variables.end(), [&](const RawVariable& v) { return v.name == var_name; });
        if (it == variables.end()) throw ValidationError(where + ": unknown variable");
        feat.variable = static_cast<std::size_t>(it - variables.begin());
        const std::string kind = as_string(require(f, "kind", where), where + " kind");
        if (kind != "step" && kind != "binary") throw ValidationError(where + ": kind must be step or binary");
        if ((kind == "binary") != (it->kind == VariableKind::Binary)) {
            throw ValidationError(where + ": feature kind '" + kind + "' does not match variable kind");
        }
        feat.weight = as_number(require(f, "weight", where), where + " weight");
        if (f.contains("or_group") && !f["or_group"].is_null()) feat.or_group = as_string(f["or_group"], where + " or_group");
        if (kind == "step") {
            feat.step_index = as_int(require(f, "step_index", where), where + " step_index");
            const auto& th = require(f, "thresholds", where);
            if (!th.is_object() || th.empty()) throw ValidationError(where + ": thresholds must be a non-empty object");
            // Order thresholds by age band declaration order, shared label alone.
            std::vector<std::pair<std::size_t, std::string>> keyed;
            for (const auto& [label, value] : th.items()) {
                std::size_t order = bands.size();
                for (std::size_t b = 0; b < bands.size(); ++b) {
                    if (bands[b].label == label) order = b;
                }
                keyed.emplace_back(order, label);
            }
            std::sort(keyed.begin(), keyed.end());
            for (const auto& [order, label] : keyed) {
                feat.threshold_bands.push_back(label);
                feat.thresholds.push_back(as_number(th[label], where + " threshold '" + label + "'"));
            }
        } else if (f.contains("thresholds") || f.contains("step_index")) {
            throw ValidationError(where + ": binary features take no thresholds or step_index");
        }
        features.push_back(std::move(feat));
    }

    OrWeightSplit split = OrWeightSplit::Full;
    if (doc.contains("or_weight_split")) {
        const auto s = as_string(doc["or_weight_split"], "or_weight_split");
        if (s == "full") split = OrWeightSplit::Full;
        else if (s == "even") split = OrWeightSplit::Even;
        else throw ValidationError("or_weight_split must be 'full' or 'even'");
    }
    return ScoreDefinition::build(name, std::move(variables), std::move(bands), std::move(features), split);
}

json definition_to_json(const ScoreDefinition& def)
{
    json doc;
    doc["name"] = def.name();
    doc["or_weight_split"] = def.or_split() == OrWeightSplit::Full ? "full" : "even";
    doc["age_bands"] = json::array();
    for (const auto& b : def.age_bands()) {
        doc["age_bands"].push_back({{"label", b.label}, {"min_months", b.min_age_months}, {"max_months", b.max_age_months}});
    }
    doc["variables"] = json::array();
    for (const auto& v : def.variables()) {
        json var = {{"name", v.name}, {"kind", variable_kind_name(v.kind)}, {"unit", v.unit}, {"range", {v.range_lo, v.range_hi}}};
        if (v.normal_value) var["normal"] = *v.normal_value;
        doc["variables"].push_back(std::move(var));
    }
    doc["features"] = json::array();
    for (const auto& f : def.features()) {
        json feat = {{"variable", def.variables()[f.variable].name}, {"kind", f.binary ? "binary" : "step"}, {"weight", f.weight}};
        feat["or_group"] = f.or_group ? json(*f.or_group) : json(nullptr);
        if (!f.binary) {
            feat["step_index"] = f.step_index;
            json th = json::object();
            for (std::size_t k = 0; k < f.thresholds.size(); ++k) th[f.threshold_bands[k]] = f.thresholds[k];
            feat["thresholds"] = std::move(th);
        }
        doc["features"].push_back(std::move(feat));
    }
    return doc;
}

ScoreDefinition load_definition(const std::filesystem::path& path)
{
    try {
        return definition_from_json(load_json(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

CohortReadResult parse_cohort_csv(std::string_view text, const ScoreDefinition& def)
{
    CohortReadResult result;
    std::vector<std::string_view> lines;
    {
        std::size_t start = 0;
        while (start <= text.size()) {
            auto nl = text.find('\n', start);
            if (nl == std::string_view::npos) nl = text.size();
            auto line = text.substr(start, nl - start);
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (!trim(line).empty()) lines.push_back(line);
            start = nl + 1;
        }
    }
    if (lines.empty()) throw ValidationError("cohort: empty file");
    auto header = split_line(lines.front());
    if (!header.empty() && header.front().starts_with("\xEF\xBB\xBF")) header.front().remove_prefix(3);
    if (header.size() < 3 || trim(header[0]) != "id" || trim(header[1]) != "age_months" || trim(header[2]) != "outcome") {
        throw ValidationError("cohort: header must start with id,age_months,outcome");
    }
    const auto& vars = def.variables();
    std::vector<std::size_t> column_var(header.size(), 0);
    std::vector<bool> seen(vars.size(), false);
    for (std::size_t c = 3; c < header.size(); ++c) {
        const std::string name(trim(header[c]));
        const auto v = def.variable_index(name);
        if (!v) throw ValidationError("cohort: column '" + name + "' is not a variable of '" + def.name() + "'");
        if (seen[*v]) throw ValidationError("cohort: duplicate column '" + name + "'");
        seen[*v] = true;
        column_var[c] = *v;
    }
    for (std::size_t v = 0; v < vars.size(); ++v) {
        if (!seen[v]) throw ValidationError("cohort: missing column '" + vars[v].name + "'");
    }

    std::set<std::string> ids;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        const auto cells = split_line(lines[li]);
        const std::string where = "cohort line " + std::to_string(li + 1);
        if (cells.size() != header.size()) {
            throw ValidationError(where + ": expected " + std::to_string(header.size()) + " cells, found " +
                                  std::to_string(cells.size()));
        }
        PatientRecord r;
        r.id = std::string(trim(cells[0]));
        if (r.id.empty()) throw ValidationError(where + ": empty id");
        if (!ids.insert(r.id).second) throw ValidationError(where + ": duplicate id '" + r.id + "'");
        if (!parse_number(trim(cells[1]), r.age_months) || r.age_months < 0) {
            throw ValidationError(where + ": age_months must be a non-negative integer");
        }
        int y = 0;
        if (!parse_number(trim(cells[2]), y) || (y != -1 && y != 1)) {
            throw ValidationError(where + ": outcome must be -1 or 1");
        }
        r.outcome = static_cast<Outcome>(y);
        r.values.assign(vars.size(), std::nullopt);
        for (std::size_t c = 3; c < cells.size(); ++c) {
            const auto cell = trim(cells[c]);
            if (cell.empty()) continue;
            double x = 0.0;
            if (!parse_number(cell, x) || !std::isfinite(x)) {
                throw ValidationError(where + ": bad value '" + std::string(cell) + "' for " + vars[column_var[c]].name);
            }
            r.values[column_var[c]] = x;
        }
        result.records.push_back(std::move(r));
    }
    result.warnings = range_warnings(result.records, def);
    return result;
}

CohortReadResult load_cohort(const std::filesystem::path& path, const ScoreDefinition& def)
{
    try {
        return parse_cohort_csv(read_file(path), def);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::string format_cohort_csv(const Cohort& cohort, const ScoreDefinition& def)
{
    std::string out = "id,age_months,outcome";
    for (const auto& v : def.variables()) out += "," + v.name;
    out += "\n";
    for (const auto& r : cohort) {
        out += r.id + "," + std::to_string(r.age_months) + "," + std::to_string(static_cast<int>(r.outcome));
        for (const auto& x : r.values) {
            out += ",";
            if (x) out += format_double(*x);
        }
        out += "\n";
    }
    return out;
}

json parameters_to_json(const ScoreParameters& params, const ScoreDefinition& def)
{
    def.check_parameters(params);
    json doc;
    doc["score"] = def.name();
    doc["intercept"] = params.intercept;
    json slopes = json::object(), thresholds = json::object(), weights = json::object();
    for (std::size_t j = 0; j < def.features().size(); ++j) {
        const auto& f = def.features()[j];
        weights[f.id] = params.weights[j];
        if (f.binary) continue;
        slopes[f.id] = params.slopes[f.slope_index];
        json th = json::object();
        for (std::size_t k = 0; k < f.thresholds.size(); ++k) th[f.threshold_bands[k]] = params.thresholds[f.threshold_offset + k];
        thresholds[f.id] = std::move(th);
    }
    doc["slopes"] = std::move(slopes);
    doc["thresholds"] = std::move(thresholds);
    doc["weights"] = std::move(weights);
    return doc;
}

ScoreParameters parameters_from_json(const json& doc, const ScoreDefinition& def)
{
    reject_unknown_keys(doc, {"score", "intercept", "slopes", "thresholds", "weights", "config", "trace"}, "parameters");
    ScoreParameters p = def.initial_parameters(1.0);
    if (doc.contains("intercept")) p.intercept = as_number(doc["intercept"], "intercept");
    const auto& slopes = require(doc, "slopes", "parameters");
    const auto& thresholds = require(doc, "thresholds", "parameters");
    const auto& weights = require(doc, "weights", "parameters");
    for (const auto* obj : {&slopes, &thresholds, &weights}) {
        if (!obj->is_object()) throw ValidationError("parameters: slopes, thresholds, weights must be objects");
        for (const auto& [id, value] : obj->items()) {
            if (!def.feature_index(id)) throw ValidationError("parameters: unknown feature '" + id + "'");
        }
    }
    for (std::size_t j = 0; j < def.features().size(); ++j) {
        const auto& f = def.features()[j];
        p.weights[j] = as_number(require(weights, f.id, "weights"), "weight of " + f.id);
        if (f.binary) continue;
        p.slopes[f.slope_index] = as_number(require(slopes, f.id, "slopes"), "slope of " + f.id);
        const auto& th = require(thresholds, f.id, "thresholds");
        if (!th.is_object() || th.size() != f.thresholds.size()) {
            throw ValidationError("parameters: thresholds of '" + f.id + "' must list every band of the definition");
        }
        for (std::size_t k = 0; k < f.thresholds.size(); ++k) {
            p.thresholds[f.threshold_offset + k] =
                as_number(require(th, f.threshold_bands[k], "thresholds of " + f.id), "threshold of " + f.id);
        }
    }
    def.check_parameters(p);
    return p;
}

std::string format_double(double value)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

json load_json(const std::filesystem::path& path)
{
    const auto text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(path.string() + ": invalid JSON: " + e.what());
    }
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file '" + path.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

}  // namespace softscore::io
