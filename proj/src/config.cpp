#include "jumpdiff/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace jumpdiff {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Value {
    std::string raw;
    int line;

    double num(const std::string& key) const {
        try {
            size_t pos = 0;
            const double v = std::stod(raw, &pos);
            if (pos != raw.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config line " + std::to_string(line) + ": key '" + key +
                              "' expects a number, got '" + raw + "'");
        }
    }
    long integer(const std::string& key) const {
        const double v = num(key);
        const long r = static_cast<long>(v);
        if (static_cast<double>(r) != v)
            throw ConfigError("config line " + std::to_string(line) + ": key '" + key +
                              "' expects an integer");
        return r;
    }
    bool boolean(const std::string& key) const {
        if (raw == "true") return true;
        if (raw == "false") return false;
        throw ConfigError("config line " + std::to_string(line) + ": key '" + key +
                          "' expects true/false");
    }
    std::string str() const {
        if (raw.size() >= 2 && raw.front() == '"' && raw.back() == '"')
            return raw.substr(1, raw.size() - 2);
        return raw;
    }
};

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig rc;
    bool saw_version = false;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // strip comments (a # outside quotes)
        bool quoted = false;
        for (size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line = line.substr(0, i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "schedule" && section != "arch" && section != "trainer" &&
                section != "sampler" && section != "paths")
                throw ConfigError("config line " + std::to_string(lineno) + ": unknown section [" +
                                  section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const Value val{trim(line.substr(eq + 1)), lineno};
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");

        auto unknown = [&]() -> ConfigError {
            return ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                               "' in section [" + (section.empty() ? "top-level" : section) + "]");
        };

        if (section.empty()) {
            if (key == "version") {
                rc.version = static_cast<int>(val.integer(key));
                saw_version = true;
            } else {
                throw unknown();
            }
        } else if (section == "schedule") {
            if (key == "T") rc.schedule.T = val.num(key);
            else if (key == "beta_min") rc.schedule.beta_min = val.num(key);
            else if (key == "beta_max") rc.schedule.beta_max = val.num(key);
            else if (key == "rate_const") rc.schedule.rate_const = val.num(key);
            else if (key == "rate_zero_until_frac") rc.schedule.rate_zero_until_frac = val.num(key);
            else if (key == "max_components") rc.schedule.max_components = static_cast<int>(val.integer(key));
            else if (key == "component_dim") rc.schedule.component_dim = static_cast<int>(val.integer(key));
            else throw unknown();
        } else if (section == "arch") {
            if (key == "mode") rc.arch.mode = val.str();
            else if (key == "hidden") rc.arch.hidden = static_cast<int>(val.integer(key));
            else if (key == "depth") rc.arch.depth = static_cast<int>(val.integer(key));
            else if (key == "time_feats") rc.arch.time_feats = static_cast<int>(val.integer(key));
            else if (key == "direct_rate_head") rc.arch.direct_rate_head = val.boolean(key);
            else throw unknown();
        } else if (section == "trainer") {
            if (key == "steps") rc.trainer.steps = val.integer(key);
            else if (key == "batch_size") rc.trainer.batch_size = static_cast<int>(val.integer(key));
            else if (key == "lr") rc.trainer.lr = val.num(key);
            else if (key == "ema_decay") rc.trainer.ema_decay = val.num(key);
            else if (key == "gamma") rc.trainer.gamma = val.num(key);
            else if (key == "t_min_frac") rc.trainer.t_min_frac = val.num(key);
            else if (key == "seed") rc.trainer.seed = static_cast<std::uint64_t>(val.integer(key));
            else throw unknown();
        } else if (section == "sampler") {
            if (key == "dt") rc.sampler.dt = val.num(key);
            else if (key == "dt_coarse") rc.sampler.dt_coarse = val.num(key);
            else if (key == "corrector_steps") rc.sampler.corrector_steps = static_cast<int>(val.integer(key));
            else if (key == "corrector_snr") rc.sampler.corrector_snr = val.num(key);
            else if (key == "corrector_start_frac") rc.sampler.corrector_start_frac = val.num(key);
            else if (key == "use_dim_corrector") rc.sampler.use_dim_corrector = val.boolean(key);
            else if (key == "rate_mode") rc.sampler.rate_mode = val.str();
            else if (key == "seed") rc.sampler.seed = static_cast<std::uint64_t>(val.integer(key));
            else if (key == "unscaled_score_drift") rc.sampler.unscaled_score_drift = val.boolean(key);
            else if (key == "strict_thinning") rc.sampler.strict_thinning = val.boolean(key);
            else if (key == "threads") rc.sampler.threads = static_cast<int>(val.integer(key));
            else throw unknown();
        } else if (section == "paths") {
            if (key == "data") rc.paths.data = val.str();
            else if (key == "out_dir") rc.paths.out_dir = val.str();
            else throw unknown();
        }
    }
    if (!saw_version) throw ConfigError("config: required key 'version' is missing");
    if (rc.version != 1) throw ConfigError("config: unsupported version " + std::to_string(rc.version));

    try {
        rc.schedule.validate();
        rc.arch.d = rc.schedule.component_dim;
        rc.arch.max_components = rc.schedule.max_components;
        rc.arch.validate();
        if (rc.sampler.rate_mode != "prop3" && rc.sampler.rate_mode != "direct-head")
            throw std::invalid_argument("sampler.rate_mode must be prop3 or direct-head");
        if (rc.sampler.rate_mode == "direct-head" && !rc.arch.direct_rate_head)
            throw std::invalid_argument("rate_mode=direct-head requires arch.direct_rate_head=true");
        rc.trainer.rate_mode = rc.sampler.rate_mode;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return rc;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::ios_base::failure("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& rc) {
    char buf[4096];
    std::snprintf(buf, sizeof(buf),
                  "version = %d\n\n"
                  "[schedule]\n"
                  "T = %.17g\nbeta_min = %.17g\nbeta_max = %.17g\nrate_const = %.17g\n"
                  "rate_zero_until_frac = %.17g\nmax_components = %d\ncomponent_dim = %d\n\n"
                  "[arch]\n"
                  "mode = \"%s\"\nhidden = %d\ndepth = %d\ntime_feats = %d\ndirect_rate_head = %s\n\n"
                  "[trainer]\n"
                  "steps = %ld\nbatch_size = %d\nlr = %.17g\nema_decay = %.17g\ngamma = %.17g\n"
                  "t_min_frac = %.17g\nseed = %llu\n\n"
                  "[sampler]\n"
                  "dt = %.17g\ndt_coarse = %.17g\ncorrector_steps = %d\ncorrector_snr = %.17g\n"
                  "corrector_start_frac = %.17g\nuse_dim_corrector = %s\nrate_mode = \"%s\"\n"
                  "seed = %llu\nunscaled_score_drift = %s\nstrict_thinning = %s\nthreads = %d\n\n"
                  "[paths]\ndata = \"%s\"\nout_dir = \"%s\"\n",
                  rc.version, rc.schedule.T, rc.schedule.beta_min, rc.schedule.beta_max,
                  rc.schedule.rate_const, rc.schedule.rate_zero_until_frac,
                  rc.schedule.max_components, rc.schedule.component_dim, rc.arch.mode.c_str(),
                  rc.arch.hidden, rc.arch.depth, rc.arch.time_feats,
                  rc.arch.direct_rate_head ? "true" : "false", rc.trainer.steps,
                  rc.trainer.batch_size, rc.trainer.lr, rc.trainer.ema_decay, rc.trainer.gamma,
                  rc.trainer.t_min_frac,
                  static_cast<unsigned long long>(rc.trainer.seed), rc.sampler.dt,
                  rc.sampler.dt_coarse, rc.sampler.corrector_steps, rc.sampler.corrector_snr,
                  rc.sampler.corrector_start_frac, rc.sampler.use_dim_corrector ? "true" : "false",
                  rc.sampler.rate_mode.c_str(), static_cast<unsigned long long>(rc.sampler.seed),
                  rc.sampler.unscaled_score_drift ? "true" : "false",
                  rc.sampler.strict_thinning ? "true" : "false", rc.sampler.threads,
                  rc.paths.data.c_str(), rc.paths.out_dir.c_str());
    return std::string(buf);
}

}  // namespace jumpdiff
