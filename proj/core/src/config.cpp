#include "histreg/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

namespace histreg {

namespace {

using preprocess::ResolutionPolicy;

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw Error(ErrorCode::parse, "config: invalid value '" + value + "' for " + key);
}

std::string format(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return {buf, res.ptr};
}
std::string format(int v) { return std::to_string(v); }
std::string format(std::uint64_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::filesystem::path& v) { return v.string(); }
std::string format(const ResolutionPolicy& p) {
    return std::string(p.mode == ResolutionPolicy::Mode::max_side ? "max_side:" : "min_side:") +
           std::to_string(p.size);
}
std::string format(const std::vector<int>& v) {
    if (v.empty()) return "auto";
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}
std::string format(const std::vector<decision::Method>& v) {
    if (v.empty()) return "none";
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::string(decision::to_string(v[i]));
    return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
    if (res.ec != std::errc() || res.ptr != value.data() + value.size()) bad_value(key, value);
    return out;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> items;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) items.push_back(trim(item));
    return items;
}

void parse_into(const std::string& key, const std::string& value, double& out) {
    out = parse_number<double>(key, value);
}
void parse_into(const std::string& key, const std::string& value, int& out) {
    out = parse_number<int>(key, value);
}
void parse_into(const std::string& key, const std::string& value, std::uint64_t& out) {
    out = parse_number<std::uint64_t>(key, value);
}
void parse_into(const std::string& key, const std::string& value, bool& out) {
    if (value == "true" || value == "1" || value == "yes") {
        out = true;
    } else if (value == "false" || value == "0" || value == "no") {
        out = false;
    } else {
        bad_value(key, value);
    }
}
void parse_into(const std::string&, const std::string& value, std::filesystem::path& out) { out = value; }
void parse_into(const std::string& key, const std::string& value, ResolutionPolicy& out) {
    const auto colon = value.find(':');
    if (colon == std::string::npos) bad_value(key, value);
    const std::string mode = trim(value.substr(0, colon));
    if (mode == "max_side") {
        out.mode = ResolutionPolicy::Mode::max_side;
    } else if (mode == "min_side") {
        out.mode = ResolutionPolicy::Mode::min_side;
    } else {
        bad_value(key, value);
    }
    out.size = parse_number<int>(key, trim(value.substr(colon + 1)));
}
void parse_into(const std::string& key, const std::string& value, std::vector<int>& out) {
    out.clear();
    if (value == "auto" || value.empty()) return;
    for (const auto& item : split_list(value)) out.push_back(parse_number<int>(key, item));
}
void parse_into(const std::string& key, const std::string& value, std::vector<decision::Method>& out) {
    out.clear();
    if (value == "none" || value.empty()) return;
    for (const auto& item : split_list(value)) {
        const auto m = decision::method_from_string(item);
        if (!m || *m == decision::Method::initial_only) bad_value(key, value);
        out.push_back(*m);
    }
}

struct Binding {
    std::string key;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&)> set;
};

template <typename Access>
Binding bind(std::string key, Access access) {
    return {key,
            [access](const PipelineConfig& c) { return format(access(const_cast<PipelineConfig&>(c))); },
            [access, key](PipelineConfig& c, const std::string& v) { parse_into(key, v, access(c)); }};
}

void add_demons(std::vector<Binding>& b, const std::string& prefix,
                nonrigid::DemonsParams PipelineConfig::*member) {
    const auto at = [member](PipelineConfig& c) -> nonrigid::DemonsParams& { return c.*member; };
    b.push_back(bind(prefix + ".levels", [at](PipelineConfig& c) -> int& { return at(c).levels; }));
    b.push_back(bind(prefix + ".iters_per_level", [at](PipelineConfig& c) -> int& { return at(c).iters_per_level; }));
    b.push_back(bind(prefix + ".sigma_fluid", [at](PipelineConfig& c) -> double& { return at(c).sigma_fluid; }));
    b.push_back(bind(prefix + ".sigma_diffusion", [at](PipelineConfig& c) -> double& { return at(c).sigma_diffusion; }));
    b.push_back(bind(prefix + ".step_scale", [at](PipelineConfig& c) -> double& { return at(c).step_scale; }));
    b.push_back(bind(prefix + ".normalization_floor",
                     [at](PipelineConfig& c) -> double& { return at(c).normalization_floor; }));
    b.push_back(bind(prefix + ".alpha", [at](PipelineConfig& c) -> double& { return at(c).alpha; }));
    b.push_back(bind(prefix + ".max_step", [at](PipelineConfig& c) -> double& { return at(c).max_step; }));
    b.push_back(bind(prefix + ".tolerance", [at](PipelineConfig& c) -> double& { return at(c).tolerance; }));
}

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = [] {
        std::vector<Binding> b;
        b.push_back(bind("seed", [](PipelineConfig& c) -> std::uint64_t& { return c.seed; }));
        b.push_back(bind("output_dir", [](PipelineConfig& c) -> std::filesystem::path& { return c.output_dir; }));
        b.push_back(bind("parallel.candidates", [](PipelineConfig& c) -> int& { return c.candidate_parallelism; }));
        b.push_back(bind("parallel.jobs", [](PipelineConfig& c) -> int& { return c.jobs; }));
        b.push_back(bind("preprocess.extra_sigma", [](PipelineConfig& c) -> double& { return c.extra_sigma; }));
        b.push_back(bind("resolution.initial", [](PipelineConfig& c) -> ResolutionPolicy& { return c.initial_resolution; }));
        b.push_back(bind("resolution.local_affine",
                         [](PipelineConfig& c) -> ResolutionPolicy& { return c.local_affine_resolution; }));
        b.push_back(bind("resolution.demons", [](PipelineConfig& c) -> ResolutionPolicy& { return c.demons_resolution; }));
        b.push_back(bind("resolution.mind_demons",
                         [](PipelineConfig& c) -> ResolutionPolicy& { return c.mind_demons_resolution; }));
        b.push_back(bind("resolution.tps", [](PipelineConfig& c) -> ResolutionPolicy& { return c.tps_resolution; }));
        b.push_back(bind("resolution.decision",
                         [](PipelineConfig& c) -> ResolutionPolicy& { return c.decision_resolution; }));
        b.push_back(bind("align.dice_threshold", [](PipelineConfig& c) -> double& { return c.dice_threshold; }));
        b.push_back(bind("align.ransac_iterations", [](PipelineConfig& c) -> int& { return c.ransac_iterations; }));
        b.push_back(bind("align.ransac_tolerance", [](PipelineConfig& c) -> double& { return c.ransac_tolerance; }));
        b.push_back(bind("align.min_consensus", [](PipelineConfig& c) -> int& { return c.min_consensus; }));
        b.push_back(bind("align.angle_step", [](PipelineConfig& c) -> double& { return c.angle_step; }));
        b.push_back(bind("align.affine_iterations", [](PipelineConfig& c) -> int& { return c.affine_iterations; }));
        b.push_back(bind("align.affine_step", [](PipelineConfig& c) -> double& { return c.affine_step; }));
        b.push_back(bind("align.skip_nonrigid_on_fail",
                         [](PipelineConfig& c) -> bool& { return c.skip_nonrigid_on_fail; }));
        add_demons(b, "demons", &PipelineConfig::demons);
        add_demons(b, "mind_demons", &PipelineConfig::mind_demons);
        b.push_back(bind("local_affine.level_schedule",
                         [](PipelineConfig& c) -> std::vector<int>& { return c.local_affine.level_schedule; }));
        b.push_back(bind("local_affine.min_window", [](PipelineConfig& c) -> int& { return c.local_affine.min_window; }));
        b.push_back(bind("local_affine.iters_per_level",
                         [](PipelineConfig& c) -> int& { return c.local_affine.iters_per_level; }));
        b.push_back(bind("local_affine.intensity_correction",
                         [](PipelineConfig& c) -> bool& { return c.local_affine.intensity_correction; }));
        b.push_back(bind("local_affine.missing_prob_sigma",
                         [](PipelineConfig& c) -> double& { return c.local_affine.missing_prob_sigma; }));
        b.push_back(bind("local_affine.min_residual_sigma",
                         [](PipelineConfig& c) -> double& { return c.local_affine.min_residual_sigma; }));
        b.push_back(bind("local_affine.field_smoothing_sigma",
                         [](PipelineConfig& c) -> double& { return c.local_affine.field_smoothing_sigma; }));
        b.push_back(bind("local_affine.max_step", [](PipelineConfig& c) -> double& { return c.local_affine.max_step; }));
        b.push_back(bind("local_affine.min_window_pixels",
                         [](PipelineConfig& c) -> int& { return c.local_affine.min_window_pixels; }));
        b.push_back(bind("tps.lambda", [](PipelineConfig& c) -> double& { return c.tps_lambda; }));
        b.push_back(bind("tps.dedup_cell", [](PipelineConfig& c) -> double& { return c.tps_dedup_cell; }));
        b.push_back(bind("tps.max_points", [](PipelineConfig& c) -> int& { return c.tps_max_points; }));
        b.push_back(bind("tps.grid_step", [](PipelineConfig& c) -> int& { return c.tps_grid_step; }));
        b.push_back(bind("engines", [](PipelineConfig& c) -> std::vector<decision::Method>& { return c.engines; }));
        b.push_back(bind("visualize.tile", [](PipelineConfig& c) -> int& { return c.checkerboard_tile; }));
        return b;
    }();
    return table;
}

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::parse, "config: " + what);
}

void validate_demons(const nonrigid::DemonsParams& p, const std::string& prefix) {
    require(p.levels >= 1, prefix + ".levels must be >= 1");
    require(p.iters_per_level >= 1, prefix + ".iters_per_level must be >= 1");
    require(p.sigma_fluid >= 0 && p.sigma_diffusion >= 0, prefix + " sigmas must be >= 0");
    require(p.step_scale > 0, prefix + ".step_scale must be > 0");
    require(p.normalization_floor > 0, prefix + ".normalization_floor must be > 0");
    require(p.alpha >= 0, prefix + ".alpha must be >= 0");
    require(p.max_step > 0, prefix + ".max_step must be > 0");
    require(p.tolerance >= 0, prefix + ".tolerance must be >= 0");
}

}  // namespace

void validate(const PipelineConfig& c) {
    require(c.candidate_parallelism >= 1, "parallel.candidates must be >= 1");
    require(c.jobs >= 1, "parallel.jobs must be >= 1");
    require(c.extra_sigma >= 0, "preprocess.extra_sigma must be >= 0");
    for (const auto* p : {&c.initial_resolution, &c.local_affine_resolution, &c.demons_resolution,
                          &c.mind_demons_resolution, &c.tps_resolution, &c.decision_resolution}) {
        require(p->size > 0, "resolution sizes must be > 0");
    }
    require(c.dice_threshold >= 0 && c.dice_threshold <= 1, "align.dice_threshold must lie in [0,1]");
    require(c.ransac_iterations >= 1, "align.ransac_iterations must be >= 1");
    require(c.ransac_tolerance > 0, "align.ransac_tolerance must be > 0");
    require(c.min_consensus >= 2, "align.min_consensus must be >= 2");
    require(c.angle_step > 0 && c.angle_step <= 360, "align.angle_step must lie in (0,360]");
    require(c.affine_iterations >= 0, "align.affine_iterations must be >= 0");
    require(c.affine_step > 0, "align.affine_step must be > 0");
    validate_demons(c.demons, "demons");
    validate_demons(c.mind_demons, "mind_demons");
    const auto& la = c.local_affine;
    require(la.min_window >= 16, "local_affine.min_window must be >= 16");
    require(la.iters_per_level >= 1, "local_affine.iters_per_level must be >= 1");
    require(la.field_smoothing_sigma >= 0, "local_affine.field_smoothing_sigma must be >= 0");
    require(la.min_residual_sigma > 0, "local_affine.min_residual_sigma must be > 0");
    require(la.max_step > 0, "local_affine.max_step must be > 0");
    require(la.min_window_pixels >= 1, "local_affine.min_window_pixels must be >= 1");
    for (std::size_t i = 0; i < la.level_schedule.size(); ++i) {
        require(la.level_schedule[i] >= 16 && (i == 0 || la.level_schedule[i] < la.level_schedule[i - 1]),
                "local_affine.level_schedule must be strictly decreasing and >= 16");
    }
    require(c.tps_lambda >= 0, "tps.lambda must be >= 0");
    require(c.tps_dedup_cell >= 0, "tps.dedup_cell must be >= 0");
    require(c.tps_max_points >= 3, "tps.max_points must be >= 3");
    require(c.tps_grid_step >= 1, "tps.grid_step must be >= 1");
    require(c.checkerboard_tile >= 1, "visualize.tile must be >= 1");
}

PipelineConfig parse_config(std::istream& in, PipelineConfig cfg) {
    std::map<std::string, const Binding*> by_key;
    for (const auto& b : bindings()) by_key[b.key] = &b;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::parse, "config: expected key = value on line " + std::to_string(line_no));
        }
        const std::string key = trim(line.substr(0, eq));
        const auto it = by_key.find(key);
        if (it == by_key.end()) throw Error(ErrorCode::parse, "config: unknown key '" + key + "'");
        it->second->set(cfg, trim(line.substr(eq + 1)));
    }
    validate(cfg);
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open config " + path.string());
    return parse_config(in, std::move(base));
}

std::string write_config(const PipelineConfig& cfg) {
    std::string out;
    for (const auto& b : bindings()) out += b.key + " = " + b.get(cfg) + "\n";
    return out;
}

PipelineConfig desk_scale_config(int working_size) {
    PipelineConfig c;
    const auto policy = ResolutionPolicy::max_side(working_size);
    c.initial_resolution = policy;
    c.local_affine_resolution = policy;
    c.demons_resolution = policy;
    c.mind_demons_resolution = policy;
    c.tps_resolution = policy;
    c.decision_resolution = policy;
    c.ransac_tolerance = std::max(2.0, 5.0 * working_size / 2048.0);
    return c;
}

}  // namespace histreg
