#pragma once

#include <stdexcept>
#include <string>

#include "jumpdiff/net.hpp"
#include "jumpdiff/objective.hpp"
#include "jumpdiff/sampler.hpp"
#include "jumpdiff/schedule.hpp"

namespace jumpdiff {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct PathsConfig {
    std::string data;
    std::string out_dir;
};

// One TOML-style document: a required top-level `version`, then [schedule],
// [arch], [trainer], [sampler], [paths] sections. Unknown keys are rejected.
// arch.d / arch.max_components mirror the schedule's component_dim / N.
struct RunConfig {
    int version = 0;
    ScheduleConfig schedule;
    ArchConfig arch;
    TrainConfig trainer;
    SamplerConfig sampler;
    PathsConfig paths;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string dump_run_config(const RunConfig& rc);

}  // namespace jumpdiff
