#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jumpdiff/config.hpp"
#include "jumpdiff/dataset.hpp"
#include "jumpdiff/net.hpp"
#include "jumpdiff/objective.hpp"
#include "jumpdiff/oracle.hpp"
#include "jumpdiff/sampler.hpp"

namespace fs = std::filesystem;
using namespace jumpdiff;

namespace {

void write_file(const std::string& path, const std::string& text) {
    if (!path.empty() && fs::path(path).has_parent_path())
        fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::ios_base::failure("cannot open for writing: " + path);
    out << text;
    if (!out) throw std::ios_base::failure("write failed: " + path);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::ios_base::failure("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string samples_to_jsonl(const std::vector<TransState>& states, int d, int N,
                             std::uint64_t seed) {
    Dataset ds;
    ds.d = d;
    ds.N = N;
    ds.kind = "samples";
    ds.seed = seed;
    ds.records = states;
    return dataset_to_jsonl(ds);
}

// ---- check suites ----

bool check_dims(std::ostream& os) {
    const auto sc = make_schedule(1.0, 0.1, 20.0, 22.5, 0.1, 8, 1);
    const std::vector<double> ts = {0.25, 0.5, 1.0};
    Rng rng(71);
    bool ok = true;
    for (int n0 : {1, 3, 8}) {
        const auto hist = mc_dim_marginal(rng, sc, n0, ts, 100000);
        for (size_t q = 0; q < ts.size(); ++q) {
            const auto law = sc.dim_marginal(ts[q], n0);
            const double tv = total_variation(hist[q], law);
            const bool pass = tv <= 0.01;
            ok = ok && pass;
            os << (pass ? "[PASS]" : "[FAIL]") << " dims n0=" << n0 << " t=" << ts[q]
               << " TV=" << tv << " (<= 0.01)\n";
        }
    }
    return ok;
}

bool check_grads(std::ostream& os) {
    ArchConfig arch;
    arch.mode = "set";
    arch.hidden = 10;
    arch.depth = 2;
    arch.d = 1;
    arch.max_components = 4;
    const auto sc = make_schedule(1.0, 0.1, 8.0, 13.0, 0.1, 4, 1);
    Rng rng(5);
    auto params = init_params(arch, rng);
    std::vector<TransState> data;
    for (int i = 0; i < 32; ++i) {
        const int n = 1 + rng.below(4);
        data.emplace_back(n, rng.normal_vec(static_cast<size_t>(n)), 1, 4);
    }
    const auto batch = build_minibatch(rng, data, 8, sc, 1e-3);
    auto f = [&](const std::vector<double>& flat) {
        ModelParams p = params;
        p.flat = flat;
        Tape tape;
        LossBreakdown bd;
        build_total_loss(tape, p, batch, sc, 1.0, "prop3", &bd);
        return bd.total;
    };
    const auto fd = finite_diff(f, params.flat, 1e-4);
    Tape tape;
    Tape::Id root = build_total_loss(tape, params, batch, sc, 1.0, "prop3", nullptr);
    std::vector<double> ad(params.flat.size(), 0.0);
    tape.backward(root, &ad);
    double worst = 0.0;
    for (size_t i = 0; i < fd.size(); ++i) {
        const double denom = std::max({1e-3, std::abs(fd[i]), std::abs(ad[i])});
        worst = std::max(worst, std::abs(fd[i] - ad[i]) / denom);
    }
    const bool pass = worst <= 1e-4;
    os << (pass ? "[PASS]" : "[FAIL]") << " grads max rel err=" << worst << " (<= 1e-4)\n";
    return pass;
}

bool check_reversal(std::ostream& os, const std::string& out_dir) {
    GridToy toy;
    toy.w1 = 0.4;
    toy.q1 = {{-1.0, 0.5, 1.0}};
    toy.q2 = {{0.9, 0.9, 0.45, 0.45, 0.4, 1.0}};
    toy.L = 6.5;
    toy.m = 512;
    const auto sc = make_schedule(1.0, 0.5, 0.5, 8.0, 0.1, 2, 1);
    const std::vector<double> ts = {0.3, 0.5, 0.75, 1.0};
    const auto res = reversal_identity_check(toy, sc, ts);
    const std::string report = fs::path(out_dir.empty() ? "." : out_dir) / "reversal_report.csv";
    write_file(report, res.csv());
    const bool pass = res.max_rel_err <= 0.02;
    os << (pass ? "[PASS]" : "[FAIL]") << " reversal max rel err=" << res.max_rel_err
       << " (<= 0.02), report: " << report << "\n";
    return pass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"trans-dimensional jump-diffusion generative modeling"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a dataset file");
    DatasetSpec spec;
    std::string gen_out = "data.jsonl";
    gen->add_option("--kind", spec.kind, "toy2 | clusters | sequences");
    gen->add_option("--size", spec.size, "number of records");
    gen->add_option("--seed", spec.seed, "rng seed");
    gen->add_option("--out", gen_out, "output path");
    gen->add_option("--max-components", spec.max_components, "N");
    gen->add_option("--component-dim", spec.component_dim, "d");
    gen->add_option("--w1", spec.toy2_w1, "toy2: weight of n=1 level");
    gen->add_option("--mean1", spec.toy2_mean1, "toy2: n=1 mean");
    gen->add_option("--std1", spec.toy2_std1, "toy2: n=1 std");
    gen->add_option("--mean2", spec.toy2_mean2, "toy2: n=2 mean");
    gen->add_option("--std2", spec.toy2_std2, "toy2: n=2 std");
    gen->add_option("--count-weights", spec.cluster_count_weights, "clusters: count law weights");
    gen->add_option("--mean-slope", spec.cluster_mean_slope, "clusters: mean spacing per count");
    gen->add_option("--sigma", spec.cluster_sigma, "clusters: component std");
    gen->add_option("--noise-std", spec.seq_noise_std, "sequences: ramp noise");

    // train
    auto* tr = app.add_subcommand("train", "train a model from a run config");
    std::string tr_config, tr_data, tr_out = "run";
    std::int64_t tr_seed = -1;
    tr->add_option("--config", tr_config, "run config (TOML)")->required();
    tr->add_option("--data", tr_data, "dataset path (overrides [paths] data)");
    tr->add_option("--out", tr_out, "output directory (overrides [paths] out_dir)");
    tr->add_option("--seed", tr_seed, "override trainer seed");

    // sample
    auto* sm = app.add_subcommand("sample", "sample the backward generative process");
    std::string sm_ckpt, sm_out = "samples.jsonl", sm_observe, sm_trace;
    int sm_count = 100;
    std::int64_t sm_seed = -1;
    bool sm_raw = false;
    double sm_gweight = 1.0;
    SamplerConfig sm_cfg;
    bool sm_corr_set = false, sm_frac_set = false, sm_dim_set = false;
    sm->add_option("--checkpoint", sm_ckpt, "checkpoint json")->required();
    sm->add_option("--count", sm_count, "number of samples");
    sm->add_option("--out", sm_out, "output samples path");
    sm->add_option("--seed", sm_seed, "sampler seed");
    sm->add_option("--dt", sm_cfg.dt, "fine step size");
    sm->add_option("--dt-coarse", sm_cfg.dt_coarse, "coarse step size for t > 0.5T");
    sm->add_option("--correctors", sm_cfg.corrector_steps, "corrector steps per time step")
        ->each([&](const std::string&) { sm_corr_set = true; });
    sm->add_option("--corrector-snr", sm_cfg.corrector_snr, "corrector snr r");
    sm->add_option("--corrector-start-frac", sm_cfg.corrector_start_frac,
                   "correctors active for t < frac*T")
        ->each([&](const std::string&) { sm_frac_set = true; });
    sm->add_flag("--dim-corrector", sm_cfg.use_dim_corrector, "insert/delete corrector moves")
        ->each([&](const std::string&) { sm_dim_set = true; });
    sm->add_option("--rate-mode", sm_cfg.rate_mode, "prop3 | direct-head");
    sm->add_flag("--unscaled-score-drift", sm_cfg.unscaled_score_drift,
                 "use the literal backward drift b-> - s (no g^2 factor)");
    sm->add_flag("--strict-thinning", sm_cfg.strict_thinning, "error on lambda*dt >= 1");
    sm->add_option("--threads", sm_cfg.threads, "worker threads (0: JUMPDIFF_THREADS or hw)");
    sm->add_option("--observe", sm_observe, "observations file for guided sampling");
    sm->add_option("--guidance-weight", sm_gweight, "reconstruction guidance weight");
    sm->add_option("--trace", sm_trace, "write per-chain traces to this CSV path");
    sm->add_flag("--raw-params", sm_raw, "sample with raw instead of EMA weights");

    // eval
    auto* ev = app.add_subcommand("eval", "compare samples against a dataset");
    std::string ev_samples, ev_data, ev_out = "eval.json", ev_observe;
    double ev_bandwidth = 0.25;
    ev->add_option("--samples", ev_samples, "samples jsonl")->required();
    ev->add_option("--data", ev_data, "dataset jsonl")->required();
    ev->add_option("--out", ev_out, "metrics json path");
    ev->add_option("--observe", ev_observe, "observations file (guided runs)");
    ev->add_option("--bandwidth", ev_bandwidth, "kernel width for the data conditional law");

    // check
    auto* ck = app.add_subcommand("check", "run oracle suites");
    std::string ck_suite = "all", ck_out;
    ck->add_option("suite", ck_suite, "dims | grads | reversal | all");
    ck->add_option("--out", ck_out, "report directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) {
            const Dataset ds = gen_dataset(spec);
            save_dataset(ds, gen_out);
            std::cout << "wrote " << ds.records.size() << " records to " << gen_out << "\n";
        } else if (*tr) {
            RunConfig rc = load_run_config(tr_config);
            if (!tr_data.empty()) rc.paths.data = tr_data;
            if (tr->count("--out") || rc.paths.out_dir.empty()) rc.paths.out_dir = tr_out;
            if (tr_seed >= 0) rc.trainer.seed = static_cast<std::uint64_t>(tr_seed);
            if (rc.paths.data.empty()) throw ConfigError("train: no dataset path given");
            const Dataset ds = load_dataset(rc.paths.data);
            if (ds.d != rc.schedule.component_dim || ds.N != rc.schedule.max_components)
                throw ConfigError("train: dataset (d, N) does not match the schedule");
            const TrainResult res = train(ds.records, rc.schedule, rc.arch, rc.trainer);
            fs::create_directories(rc.paths.out_dir);
            write_file((fs::path(rc.paths.out_dir) / "checkpoint.json").string(),
                       res.checkpoint.to_json());
            write_file((fs::path(rc.paths.out_dir) / "metrics.csv").string(), res.metrics_csv);
            std::cout << "trained " << rc.trainer.steps << " steps; artifacts in "
                      << rc.paths.out_dir << "\n";
        } else if (*sm) {
            const Checkpoint ckpt = Checkpoint::from_json(read_file(sm_ckpt));
            const ModelParams params = ckpt.model(!sm_raw);
            if (sm_seed >= 0) sm_cfg.seed = static_cast<std::uint64_t>(sm_seed);
            GuidanceSpec guidance;
            const bool guided = !sm_observe.empty();
            if (guided) {
                guidance = load_observations(sm_observe, ckpt.arch.d, sm_gweight);
                // guided defaults: correctors over all t including dimension moves
                if (!sm_corr_set) sm_cfg.corrector_steps = 3;
                if (!sm_frac_set) sm_cfg.corrector_start_frac = 1.0;
                if (!sm_dim_set) sm_cfg.use_dim_corrector = true;
            }
            const SampleResult res = sample(params, ckpt.schedule, sm_cfg, sm_count,
                                            guided ? &guidance : nullptr, !sm_trace.empty());
            write_file(sm_out, samples_to_jsonl(res.states, ckpt.arch.d,
                                                ckpt.arch.max_components, sm_cfg.seed));
            if (!sm_trace.empty()) {
                std::string tcsv;
                for (size_t c = 0; c < res.traces.size(); ++c) {
                    tcsv += "# chain " + std::to_string(c) + "\n";
                    tcsv += res.traces[c].to_csv();
                }
                write_file(sm_trace, tcsv);
            }
            std::cout << "wrote " << res.states.size() << " samples to " << sm_out
                      << " (thinning clamps: " << res.stats.thinning_violations << ")\n";
        } else if (*ev) {
            const Dataset samples = load_dataset(ev_samples);
            const Dataset data = load_dataset(ev_data);
            EvalOptions opts;
            opts.bandwidth = ev_bandwidth;
            GuidanceSpec obs;
            if (!ev_observe.empty()) {
                obs = load_observations(ev_observe, data.d, 1.0);
                opts.observe = &obs;
            }
            write_file(ev_out, eval_samples_json(samples.records, data, opts));
            std::cout << "wrote metrics to " << ev_out << "\n";
        } else if (*ck) {
            bool ok = true;
            if (ck_suite == "dims" || ck_suite == "all") ok = check_dims(std::cout) && ok;
            if (ck_suite == "grads" || ck_suite == "all") ok = check_grads(std::cout) && ok;
            if (ck_suite == "reversal" || ck_suite == "all")
                ok = check_reversal(std::cout, ck_out) && ok;
            if (ck_suite != "dims" && ck_suite != "grads" && ck_suite != "reversal" &&
                ck_suite != "all")
                throw ConfigError("check: unknown suite '" + ck_suite + "'");
            if (!ok) {
                std::cout << "check: FAILURES\n";
                return 3;
            }
            std::cout << "check: all passed\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
