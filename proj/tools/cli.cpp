#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "netfact/baselines.hpp"
#include "netfact/exceptions.hpp"
#include "netfact/io.hpp"
#include "netfact/metrics.hpp"
#include "netfact/model.hpp"
#include "netfact/parallel.hpp"
#include "netfact/predict.hpp"
#include "netfact/random.hpp"
#include "netfact/synthetic.hpp"
#include "netfact/trainer.hpp"

namespace netfact {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------- json utils

ordered_json load_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    return j;
}

void reject_unknown(const ordered_json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (const auto& item : obj.items()) {
        if (!allowed.count(item.key()))
            throw ConfigError("unknown key \"" + item.key() + "\" in " + where);
    }
}

template <typename T>
void take(const ordered_json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const std::exception&) {
            throw ConfigError(std::string("invalid value for \"") + key + "\"");
        }
    }
}

// ------------------------------------------------------------- config blocks

ordered_json hyper_to_json(const HyperParams& hp) {
    ordered_json j;
    j["gamma"] = hp.gamma;
    j["lambda1"] = hp.lambda1;
    j["lambda2"] = hp.lambda2;
    j["lambda3"] = hp.lambda3;
    j["step_t"] = hp.step_t;
    j["K"] = hp.K;
    j["eta0"] = hp.eta0;
    j["eta_decay"] = hp.eta_decay;
    j["max_outer_iters"] = hp.max_outer_iters;
    j["tol_objective"] = hp.tol_objective;
    j["tol_constraint"] = hp.tol_constraint;
    j["rng_seed"] = hp.rng_seed;
    return j;
}

void hyper_from_json(const ordered_json& j, HyperParams& hp) {
    reject_unknown(j,
                   {"gamma", "lambda1", "lambda2", "lambda3", "step_t", "K", "eta0",
                    "eta_decay", "max_outer_iters", "tol_objective", "tol_constraint",
                    "rng_seed"},
                   "hyper section");
    take(j, "gamma", hp.gamma);
    take(j, "lambda1", hp.lambda1);
    take(j, "lambda2", hp.lambda2);
    take(j, "lambda3", hp.lambda3);
    take(j, "step_t", hp.step_t);
    take(j, "K", hp.K);
    take(j, "eta0", hp.eta0);
    take(j, "eta_decay", hp.eta_decay);
    take(j, "max_outer_iters", hp.max_outer_iters);
    take(j, "tol_objective", hp.tol_objective);
    take(j, "tol_constraint", hp.tol_constraint);
    take(j, "rng_seed", hp.rng_seed);
}

ordered_json trainer_to_json(const TrainerConfig& cfg) {
    ordered_json j;
    j["prox_inner_iters"] = cfg.prox_inner_iters;
    j["line_search"] = cfg.line_search;
    j["trace_every"] = cfg.trace_every;
    j["prox_variant"] =
        cfg.prox_variant == ProxVariant::Verbatim ? "verbatim" : "standard";
    j["restarts"] = cfg.restarts;
    return j;
}

void trainer_from_json(const ordered_json& j, TrainerConfig& cfg) {
    reject_unknown(
        j, {"prox_inner_iters", "line_search", "trace_every", "prox_variant", "restarts"},
        "trainer section");
    take(j, "prox_inner_iters", cfg.prox_inner_iters);
    take(j, "line_search", cfg.line_search);
    take(j, "trace_every", cfg.trace_every);
    take(j, "restarts", cfg.restarts);
    if (j.contains("prox_variant")) {
        const std::string v = j.at("prox_variant").get<std::string>();
        if (v == "verbatim")
            cfg.prox_variant = ProxVariant::Verbatim;
        else if (v == "standard")
            cfg.prox_variant = ProxVariant::Standard;
        else
            throw ConfigError("prox_variant must be \"verbatim\" or \"standard\"");
    }
}

ordered_json generator_to_json(const GeneratorConfig& g) {
    ordered_json j;
    j["M"] = g.M;
    j["N"] = g.N;
    j["K_true"] = g.K_true;
    j["sigma_B"] = g.sigma_B;
    j["sparsity_level"] = g.sparsity_level;
    j["overlap_level"] = g.overlap_level;
    j["sigma_gamma"] = g.sigma_gamma;
    j["sigma_c"] = g.sigma_c;
    j["sigma_w"] = g.sigma_w;
    j["sigma_y"] = g.sigma_y;
    j["rng_seed"] = g.rng_seed;
    return j;
}

void generator_from_json(const ordered_json& j, GeneratorConfig& g) {
    reject_unknown(j,
                   {"M", "N", "K_true", "sigma_B", "sparsity_level", "overlap_level",
                    "sigma_gamma", "sigma_c", "sigma_w", "sigma_y", "rng_seed"},
                   "generator section");
    take(j, "M", g.M);
    take(j, "N", g.N);
    take(j, "K_true", g.K_true);
    take(j, "sigma_B", g.sigma_B);
    take(j, "sparsity_level", g.sparsity_level);
    take(j, "overlap_level", g.overlap_level);
    take(j, "sigma_gamma", g.sigma_gamma);
    take(j, "sigma_c", g.sigma_c);
    take(j, "sigma_w", g.sigma_w);
    take(j, "sigma_y", g.sigma_y);
    take(j, "rng_seed", g.rng_seed);
}

ordered_json forest_to_json(const ForestConfig& f) {
    ordered_json j;
    j["tree_count"] = f.tree_count;
    if (f.max_depth)
        j["max_depth"] = *f.max_depth;
    else
        j["max_depth"] = nullptr;
    j["min_leaf_size"] = f.min_leaf_size;
    j["feature_subsample"] = f.feature_subsample;
    j["bootstrap"] = f.bootstrap;
    j["rng_seed"] = f.rng_seed;
    return j;
}

void forest_from_json(const ordered_json& j, ForestConfig& f) {
    reject_unknown(j,
                   {"tree_count", "max_depth", "min_leaf_size", "feature_subsample",
                    "bootstrap", "rng_seed"},
                   "forest section");
    take(j, "tree_count", f.tree_count);
    if (j.contains("max_depth")) {
        if (j.at("max_depth").is_null())
            f.max_depth.reset();
        else
            f.max_depth = j.at("max_depth").get<int>();
    }
    take(j, "min_leaf_size", f.min_leaf_size);
    take(j, "feature_subsample", f.feature_subsample);
    take(j, "bootstrap", f.bootstrap);
    take(j, "rng_seed", f.rng_seed);
}

struct FoldArgs {
    int count = 10;
    std::uint64_t seed = 0;
};

ordered_json folds_to_json(const FoldArgs& f) {
    ordered_json j;
    j["count"] = f.count;
    j["seed"] = f.seed;
    return j;
}

void folds_from_json(const ordered_json& j, FoldArgs& f) {
    reject_unknown(j, {"count", "seed"}, "folds section");
    take(j, "count", f.count);
    take(j, "seed", f.seed);
}

void apply_preset(const std::string& name, HyperParams& hp) {
    if (name == "ados") {
        hp.gamma = 1.0;
        hp.lambda1 = 30.0;
        hp.lambda2 = 0.2;
        hp.lambda3 = 1.0;
        hp.step_t = 0.001;
        hp.K = 8;
    } else if (name == "srs") {
        hp.gamma = 1.0;
        hp.lambda1 = 40.0;
        hp.lambda2 = 2.0;
        hp.lambda3 = 1.0;
        hp.step_t = 0.001;
        hp.K = 8;
    } else {
        throw ConfigError("unknown preset \"" + name + "\" (expected ados or srs)");
    }
}

void write_resolved_config(const fs::path& out_dir, const ordered_json& j) {
    fs::create_directories(out_dir);
    atomic_write_text(out_dir / "config.resolved.json", j.dump(2) + "\n");
}

// --------------------------------------------------------------- CLI wiring

// Hyper/trainer flag bundle shared by fit/cv/sweep/grid.
struct SolverFlags {
    HyperParams hp;
    TrainerConfig trainer;
    std::string preset;
    std::string prox_variant = "verbatim";
    bool no_line_search = false;

    CLI::Option* o_preset = nullptr;
    CLI::Option* o_gamma = nullptr;
    CLI::Option* o_l1 = nullptr;
    CLI::Option* o_l2 = nullptr;
    CLI::Option* o_l3 = nullptr;
    CLI::Option* o_t = nullptr;
    CLI::Option* o_k = nullptr;
    CLI::Option* o_eta0 = nullptr;
    CLI::Option* o_eta_decay = nullptr;
    CLI::Option* o_max_iters = nullptr;
    CLI::Option* o_tol_obj = nullptr;
    CLI::Option* o_tol_con = nullptr;
    CLI::Option* o_seed = nullptr;
    CLI::Option* o_restarts = nullptr;
    CLI::Option* o_no_ls = nullptr;
    CLI::Option* o_prox = nullptr;
    CLI::Option* o_prox_inner = nullptr;
    CLI::Option* o_trace_every = nullptr;

    void add_to(CLI::App* sub) {
        o_preset = sub->add_option("--preset", preset, "hyperparameter preset: ados | srs");
        o_gamma = sub->add_option("--gamma", hp.gamma, "prediction loss weight");
        o_l1 = sub->add_option("--lambda1", hp.lambda1, "l1 weight on B");
        o_l2 = sub->add_option("--lambda2", hp.lambda2, "l2 weight on C");
        o_l3 = sub->add_option("--lambda3", hp.lambda3, "l2 weight on w");
        o_t = sub->add_option("--step-t", hp.step_t, "proximal step size");
        o_k = sub->add_option("--K", hp.K, "number of components");
        o_eta0 = sub->add_option("--eta0", hp.eta0, "initial dual step");
        o_eta_decay = sub->add_option("--eta-decay", hp.eta_decay, "dual step decay");
        o_max_iters = sub->add_option("--max-iters", hp.max_outer_iters,
                                      "maximum outer iterations");
        o_tol_obj = sub->add_option("--tol-objective", hp.tol_objective,
                                    "relative objective tolerance");
        o_tol_con = sub->add_option("--tol-constraint", hp.tol_constraint,
                                    "constraint residual tolerance");
        o_seed = sub->add_option("--seed", hp.rng_seed, "training seed");
        o_restarts = sub->add_option("--restarts", trainer.restarts,
                                     "random restarts, best objective wins");
        o_no_ls = sub->add_flag("--no-line-search", no_line_search,
                                "disable backtracking on the proximal step");
        o_prox = sub->add_option("--prox", prox_variant,
                                 "proximal rule: verbatim | standard");
        o_prox_inner = sub->add_option("--prox-inner", trainer.prox_inner_iters,
                                       "proximal updates per outer iteration");
        o_trace_every = sub->add_option("--trace-every", trainer.trace_every,
                                        "trace record stride");
    }

    // defaults -> preset -> config file -> explicit flags
    void resolve(const ordered_json* config_hyper, const ordered_json* config_trainer) {
        HyperParams flag_hp = hp;
        TrainerConfig flag_tr = trainer;
        hp = HyperParams{};
        trainer = TrainerConfig{};
        if (*o_preset) apply_preset(preset, hp);
        if (config_hyper) hyper_from_json(*config_hyper, hp);
        if (config_trainer) trainer_from_json(*config_trainer, trainer);
        if (*o_gamma) hp.gamma = flag_hp.gamma;
        if (*o_l1) hp.lambda1 = flag_hp.lambda1;
        if (*o_l2) hp.lambda2 = flag_hp.lambda2;
        if (*o_l3) hp.lambda3 = flag_hp.lambda3;
        if (*o_t) hp.step_t = flag_hp.step_t;
        if (*o_k) hp.K = flag_hp.K;
        if (*o_eta0) hp.eta0 = flag_hp.eta0;
        if (*o_eta_decay) hp.eta_decay = flag_hp.eta_decay;
        if (*o_max_iters) hp.max_outer_iters = flag_hp.max_outer_iters;
        if (*o_tol_obj) hp.tol_objective = flag_hp.tol_objective;
        if (*o_tol_con) hp.tol_constraint = flag_hp.tol_constraint;
        if (*o_seed) hp.rng_seed = flag_hp.rng_seed;
        if (*o_restarts) trainer.restarts = flag_tr.restarts;
        if (*o_prox_inner) trainer.prox_inner_iters = flag_tr.prox_inner_iters;
        if (*o_trace_every) trainer.trace_every = flag_tr.trace_every;
        if (*o_no_ls && no_line_search) trainer.line_search = false;
        if (*o_prox) {
            if (prox_variant == "verbatim")
                trainer.prox_variant = ProxVariant::Verbatim;
            else if (prox_variant == "standard")
                trainer.prox_variant = ProxVariant::Standard;
            else
                throw ConfigError("--prox must be verbatim or standard");
        }
        trainer.hp = hp;
    }
};

struct GeneratorFlags {
    GeneratorConfig gen;
    CLI::Option* o_m = nullptr;
    CLI::Option* o_n = nullptr;
    CLI::Option* o_k = nullptr;
    CLI::Option* o_sigma_b = nullptr;
    CLI::Option* o_sparsity = nullptr;
    CLI::Option* o_overlap = nullptr;
    CLI::Option* o_sigma_gamma = nullptr;
    CLI::Option* o_sigma_c = nullptr;
    CLI::Option* o_sigma_w = nullptr;
    CLI::Option* o_sigma_y = nullptr;
    CLI::Option* o_seed = nullptr;

    void add_to(CLI::App* sub) {
        o_m = sub->add_option("--M", gen.M, "matrix size");
        o_n = sub->add_option("--N", gen.N, "subject count");
        o_k = sub->add_option("--K", gen.K_true, "true component count");
        o_sigma_b = sub->add_option("--sigma-b", gen.sigma_B, "basis Laplace scale");
        o_sparsity = sub->add_option("--sparsity", gen.sparsity_level,
                                     "nonzero fraction per column");
        o_overlap = sub->add_option("--overlap", gen.overlap_level,
                                    "shared support fraction");
        o_sigma_gamma =
            sub->add_option("--sigma-gamma", gen.sigma_gamma, "matrix noise std");
        o_sigma_c = sub->add_option("--sigma-c", gen.sigma_c, "coefficient scale");
        o_sigma_w = sub->add_option("--sigma-w", gen.sigma_w, "weight scale");
        o_sigma_y = sub->add_option("--sigma-y", gen.sigma_y, "score noise std");
        o_seed = sub->add_option("--seed", gen.rng_seed, "generator seed");
    }

    void resolve(const ordered_json* config_gen) {
        GeneratorConfig flags = gen;
        gen = GeneratorConfig{};
        if (config_gen) generator_from_json(*config_gen, gen);
        if (*o_m) gen.M = flags.M;
        if (*o_n) gen.N = flags.N;
        if (*o_k) gen.K_true = flags.K_true;
        if (*o_sigma_b) gen.sigma_B = flags.sigma_B;
        if (*o_sparsity) gen.sparsity_level = flags.sparsity_level;
        if (*o_overlap) gen.overlap_level = flags.overlap_level;
        if (*o_sigma_gamma) gen.sigma_gamma = flags.sigma_gamma;
        if (*o_sigma_c) gen.sigma_c = flags.sigma_c;
        if (*o_sigma_w) gen.sigma_w = flags.sigma_w;
        if (*o_sigma_y) gen.sigma_y = flags.sigma_y;
        if (*o_seed) gen.rng_seed = flags.rng_seed;
    }
};

std::vector<double> parse_grid_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError(std::string("invalid number \"") + tok + "\" in " + what);
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + " must be non-empty");
    return out;
}

ordered_json section_or_null(const std::optional<ordered_json>& cfg, const char* name,
                             const std::set<std::string>& allowed_sections) {
    if (!cfg) return nullptr;
    reject_unknown(*cfg, allowed_sections, "config file");
    if (cfg->contains(name)) return cfg->at(name);
    return nullptr;
}

// ---------------------------------------------------------------- subcommands

int cmd_synth(const GeneratorConfig& gen, const fs::path& out_dir) {
    CohortDataset data;
    GroundTruth truth;
    generate_cohort(gen, data, truth);
    fs::create_directories(out_dir);
    save_cohort(out_dir, data);
    write_matrix_csv(out_dir / "truth_B.csv", truth.B_true);
    write_matrix_csv(out_dir / "truth_C.csv", truth.C_true);
    write_matrix_csv(out_dir / "truth_w.csv", truth.w_true);
    ordered_json resolved;
    resolved["command"] = "synth";
    resolved["generator"] = generator_to_json(gen);
    write_resolved_config(out_dir, resolved);
    std::cout << "wrote " << data.n_subjects() << " subjects to " << out_dir.string()
              << "\n";
    return 0;
}

struct DataArgs {
    std::string matrices;
    std::string scores;
    bool deflate = false;
};

ordered_json data_to_json(const DataArgs& d) {
    ordered_json j;
    j["matrices"] = d.matrices;
    j["scores"] = d.scores;
    j["deflate"] = d.deflate;
    return j;
}

int cmd_fit(const DataArgs& dargs, const TrainerConfig& cfg, const fs::path& out_dir) {
    const CohortDataset data = load_cohort(dargs.matrices, dargs.scores, dargs.deflate);
    const FitResult res = fit(data, cfg);
    fs::create_directories(out_dir);
    Checkpoint ck;
    ck.model = res.model;
    ck.hp = cfg.hp;
    ck.seed = cfg.hp.rng_seed;
    ck.iteration = res.iterations;
    write_checkpoint(out_dir / "checkpoint.json", ck);
    write_trace_csv(out_dir / "trace.csv", res.trace);
    ordered_json resolved;
    resolved["command"] = "fit";
    resolved["data"] = data_to_json(dargs);
    resolved["hyper"] = hyper_to_json(cfg.hp);
    resolved["trainer"] = trainer_to_json(cfg);
    write_resolved_config(out_dir, resolved);
    std::cout << "fit: iterations=" << res.iterations
              << " converged=" << (res.converged ? "yes" : "no")
              << " residual=" << res.final_residual
              << " objective=" << res.final_objective << "\n";
    return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& matrix_dir,
                const std::string& scores_file, bool deflate, const fs::path& out_dir) {
    const Checkpoint ck = read_checkpoint(checkpoint_path);
    std::vector<std::string> ids;
    std::vector<Matrix> mats;
    if (!scores_file.empty()) {
        const CohortDataset data = load_cohort(matrix_dir, scores_file, deflate);
        ids = data.subject_ids;
        mats = data.gammas;
    } else {
        for (const auto& entry : fs::directory_iterator(matrix_dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
            const std::string stem = entry.path().stem().string();
            if (stem == "scores" || stem.rfind("truth_", 0) == 0) continue;
            ids.push_back(stem);
        }
        std::sort(ids.begin(), ids.end());
        if (ids.empty()) throw DataError("no matrix files found in " + matrix_dir);
        CohortDataset data;
        for (const std::string& id : ids)
            data.gammas.push_back(read_matrix_csv(fs::path(matrix_dir) / (id + ".csv")));
        data.scores = Vector::Zero(static_cast<Eigen::Index>(ids.size()));
        data.subject_ids = ids;
        validate_dataset(data);
        if (deflate) deflate_first_eigenvector(data);
        mats = data.gammas;
    }
    fs::create_directories(out_dir);
    std::string csv = "subject_id,prediction\n";
    int missing = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto pred = predict_subject(ck.model.B, ck.model.w, mats[i], ck.hp);
        csv += ids[i] + ',';
        if (pred) {
            csv += format_g17(*pred);
        } else {
            ++missing;
            std::cerr << "warning: prediction unavailable for subject " << ids[i] << "\n";
        }
        csv += '\n';
    }
    atomic_write_text(out_dir / "predictions.csv", csv);
    ordered_json resolved;
    resolved["command"] = "predict";
    resolved["checkpoint"] = checkpoint_path;
    DataArgs d{matrix_dir, scores_file, deflate};
    resolved["data"] = data_to_json(d);
    write_resolved_config(out_dir, resolved);
    std::cout << "predicted " << ids.size() - missing << "/" << ids.size()
              << " subjects\n";
    return 0;
}

int cmd_cv(const DataArgs& dargs, const TrainerConfig& cfg, const FoldArgs& folds,
           const fs::path& out_dir) {
    const CohortDataset data = load_cohort(dargs.matrices, dargs.scores, dargs.deflate);
    const FoldSplit split = make_folds(data.n_subjects(), folds.count, folds.seed);
    PredictionReport report = run_cross_validation(data, cfg, split);
    fs::create_directories(out_dir);
    emit_report(report, out_dir / "report.json");
    ordered_json resolved;
    resolved["command"] = "cv";
    resolved["data"] = data_to_json(dargs);
    resolved["hyper"] = hyper_to_json(cfg.hp);
    resolved["trainer"] = trainer_to_json(cfg);
    resolved["folds"] = folds_to_json(folds);
    write_resolved_config(out_dir, resolved);
    std::cout << "cv: rmse_test=" << report.rmse_test << " r2_test=" << report.r2_test
              << "\n";
    return 0;
}

int cmd_baseline(const DataArgs& dargs, const BaselineConfig& cfg, const FoldArgs& folds,
                 const fs::path& out_dir) {
    const CohortDataset data = load_cohort(dargs.matrices, dargs.scores, dargs.deflate);
    const FoldSplit split = make_folds(data.n_subjects(), folds.count, folds.seed);
    PredictionReport report = run_baseline(data, cfg, split);
    fs::create_directories(out_dir);
    emit_report(report, out_dir / "report.json");
    ordered_json resolved;
    resolved["command"] = "baseline";
    resolved["data"] = data_to_json(dargs);
    ordered_json bj;
    bj["kind"] = cfg.kind == BaselineKind::Pca ? "pca" : "kpca";
    bj["components"] = cfg.components;
    bj["rbf_coeff"] = cfg.rbf_coeff;
    resolved["baseline"] = std::move(bj);
    resolved["forest"] = forest_to_json(cfg.forest);
    resolved["folds"] = folds_to_json(folds);
    write_resolved_config(out_dir, resolved);
    std::cout << report.method << ": rmse_test=" << report.rmse_test
              << " r2_test=" << report.r2_test << "\n";
    return 0;
}

int cmd_sweep(const GeneratorConfig& base, const TrainerConfig& cfg,
              const std::vector<double>& sigma_grid,
              const std::vector<double>& sparsity_grid, int trials,
              const fs::path& out_dir) {
    const SweepResult result = robustness_sweep(sigma_grid, sparsity_grid, trials, base, cfg);
    fs::create_directories(out_dir);
    write_sweep(result, out_dir);
    ordered_json resolved;
    resolved["command"] = "sweep";
    resolved["generator"] = generator_to_json(base);
    resolved["hyper"] = hyper_to_json(cfg.hp);
    resolved["trainer"] = trainer_to_json(cfg);
    ordered_json sj;
    sj["sigma_grid"] = sigma_grid;
    sj["sparsity_grid"] = sparsity_grid;
    sj["trials"] = trials;
    resolved["sweep"] = std::move(sj);
    write_resolved_config(out_dir, resolved);
    double worst = 1.0;
    for (const auto& row : result.cells)
        for (const auto& cell : row) worst = std::min(worst, cell.mean_similarity);
    std::cout << "sweep: " << sigma_grid.size() << "x" << sparsity_grid.size()
              << " cells, worst mean similarity " << worst << "\n";
    return 0;
}

struct GridLists {
    std::vector<double> gamma, lambda1, lambda2, lambda3;
    std::vector<int> K;
};

int cmd_grid(const DataArgs& dargs, const TrainerConfig& base, const GridLists& lists,
             const FoldArgs& outer, int holdout_fold, int inner_folds,
             const fs::path& out_dir) {
    const CohortDataset full = load_cohort(dargs.matrices, dargs.scores, dargs.deflate);
    CohortDataset pool = full;
    if (holdout_fold >= 0) {
        if (holdout_fold >= outer.count)
            throw ConfigError("holdout fold out of range");
        const FoldSplit split = make_folds(full.n_subjects(), outer.count, outer.seed);
        pool = CohortDataset{};
        std::vector<double> scores;
        for (int i = 0; i < full.n_subjects(); ++i) {
            if (split.assignments[i] == holdout_fold) continue;
            pool.gammas.push_back(full.gammas[i]);
            pool.subject_ids.push_back(full.subject_ids[i]);
            scores.push_back(full.scores(i));
        }
        pool.scores = Eigen::Map<Vector>(scores.data(),
                                         static_cast<Eigen::Index>(scores.size()));
    }
    if (inner_folds < 2) throw ConfigError("inner folds must be at least 2");
    const FoldSplit inner =
        make_folds(pool.n_subjects(), inner_folds, derive_seed(outer.seed, "grid-inner"));

    auto gv = [](const std::vector<double>& v, double d) {
        return v.empty() ? std::vector<double>{d} : v;
    };
    const std::vector<double> gammas = gv(lists.gamma, base.hp.gamma);
    const std::vector<double> l1s = gv(lists.lambda1, base.hp.lambda1);
    const std::vector<double> l2s = gv(lists.lambda2, base.hp.lambda2);
    const std::vector<double> l3s = gv(lists.lambda3, base.hp.lambda3);
    const std::vector<int> ks =
        lists.K.empty() ? std::vector<int>{base.hp.K} : lists.K;

    std::string results_csv = "gamma,lambda1,lambda2,lambda3,K,rmse_test,r2_test\n";
    bool have_best = false;
    double best_rmse = 0.0;
    HyperParams best_hp;
    for (double g : gammas)
        for (double l1 : l1s)
            for (double l2 : l2s)
                for (double l3 : l3s)
                    for (int k : ks) {
                        TrainerConfig cfg = base;
                        cfg.hp.gamma = g;
                        cfg.hp.lambda1 = l1;
                        cfg.hp.lambda2 = l2;
                        cfg.hp.lambda3 = l3;
                        cfg.hp.K = k;
                        const PredictionReport rep =
                            run_cross_validation(pool, cfg, inner);
                        results_csv += format_g17(g) + ',' + format_g17(l1) + ',' +
                                       format_g17(l2) + ',' + format_g17(l3) + ',' +
                                       std::to_string(k) + ',' +
                                       format_g17(rep.rmse_test) + ',' +
                                       format_g17(rep.r2_test) + '\n';
                        if (!have_best || rep.rmse_test < best_rmse) {
                            have_best = true;
                            best_rmse = rep.rmse_test;
                            best_hp = cfg.hp;
                        }
                    }
    fs::create_directories(out_dir);
    atomic_write_text(out_dir / "grid_results.csv", results_csv);
    ordered_json best;
    best["format_version"] = "1";
    best["rmse_test"] = best_rmse;
    best["hyper"] = hyper_to_json(best_hp);
    atomic_write_text(out_dir / "best_config.json", best.dump(2) + "\n");

    ordered_json resolved;
    resolved["command"] = "grid";
    resolved["data"] = data_to_json(dargs);
    resolved["hyper"] = hyper_to_json(base.hp);
    resolved["trainer"] = trainer_to_json(base);
    resolved["folds"] = folds_to_json(outer);
    ordered_json gj;
    gj["lists"] = ordered_json{{"gamma", gammas}, {"lambda1", l1s},  {"lambda2", l2s},
                               {"lambda3", l3s}, {"K", ks}};
    gj["holdout_fold"] = holdout_fold;
    gj["inner_folds"] = inner_folds;
    resolved["grid"] = std::move(gj);
    write_resolved_config(out_dir, resolved);
    std::cout << "grid: best rmse_test=" << best_rmse << "\n";
    return 0;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
    try {
        CLI::App app{"Joint sparse factorization of correlation matrices with severity regression"};
        app.require_subcommand(1);
        int threads = 1;
        app.add_option("--threads", threads, "worker thread cap (does not affect results)");

        // synth
        auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
        synth->fallthrough();
        GeneratorFlags synth_gen;
        synth_gen.add_to(synth);
        std::string synth_out;
        synth->add_option("--out", synth_out, "output directory")->required();
        std::string synth_config;
        synth->add_option("--config", synth_config, "JSON config file");

        // shared data/solver flags builders
        auto add_data_flags = [](CLI::App* sub, DataArgs& d, bool scores_required) {
            sub->add_option("--matrices", d.matrices, "directory of <subject_id>.csv")
                ->required();
            auto* s = sub->add_option("--scores", d.scores, "scores CSV");
            if (scores_required) s->required();
            sub->add_flag("--deflate", d.deflate, "remove leading eigenvector component");
        };

        // fit
        auto* fit_cmd = app.add_subcommand("fit", "train on a cohort");
        fit_cmd->fallthrough();
        DataArgs fit_data;
        add_data_flags(fit_cmd, fit_data, true);
        SolverFlags fit_solver;
        fit_solver.add_to(fit_cmd);
        std::string fit_out, fit_config;
        fit_cmd->add_option("--out", fit_out, "output directory")->required();
        fit_cmd->add_option("--config", fit_config, "JSON config file");

        // predict
        auto* predict_cmd = app.add_subcommand("predict", "score unseen matrices");
        predict_cmd->fallthrough();
        std::string pr_checkpoint, pr_matrices, pr_scores, pr_out;
        bool pr_deflate = false;
        predict_cmd->add_option("--checkpoint", pr_checkpoint, "checkpoint JSON")
            ->required();
        predict_cmd->add_option("--matrices", pr_matrices, "directory of matrices")
            ->required();
        predict_cmd->add_option("--scores", pr_scores,
                                "optional scores CSV restricting subjects");
        predict_cmd->add_flag("--deflate", pr_deflate,
                              "remove leading eigenvector component");
        predict_cmd->add_option("--out", pr_out, "output directory")->required();

        // cv
        auto* cv_cmd = app.add_subcommand("cv", "cross-validated evaluation");
        cv_cmd->fallthrough();
        DataArgs cv_data;
        add_data_flags(cv_cmd, cv_data, true);
        SolverFlags cv_solver;
        cv_solver.add_to(cv_cmd);
        FoldArgs cv_folds;
        auto* cv_o_folds = cv_cmd->add_option("--folds", cv_folds.count, "fold count");
        auto* cv_o_fseed =
            cv_cmd->add_option("--fold-seed", cv_folds.seed, "fold shuffle seed");
        std::string cv_out, cv_config;
        cv_cmd->add_option("--out", cv_out, "output directory")->required();
        cv_cmd->add_option("--config", cv_config, "JSON config file");

        // baseline
        auto* base_cmd = app.add_subcommand("baseline", "PCA / kernel-PCA + forest");
        base_cmd->fallthrough();
        DataArgs base_data;
        add_data_flags(base_cmd, base_data, true);
        std::string base_which = "pca";
        base_cmd->add_option("--which", base_which, "pca | kpca");
        int base_components = -1;
        base_cmd->add_option("--components", base_components,
                             "reducer output dimension (default 15 pca, 10 kpca)");
        double base_rbf = 0.1;
        base_cmd->add_option("--rbf-coeff", base_rbf, "RBF exponent coefficient");
        ForestConfig base_forest;
        base_cmd->add_option("--trees", base_forest.tree_count, "tree count");
        int base_max_depth = 0;
        base_cmd->add_option("--max-depth", base_max_depth, "max tree depth (0 = none)");
        base_cmd->add_option("--min-leaf", base_forest.min_leaf_size, "min leaf size");
        base_cmd->add_option("--feature-frac", base_forest.feature_subsample,
                             "per-split feature fraction");
        bool base_no_bootstrap = false;
        base_cmd->add_flag("--no-bootstrap", base_no_bootstrap, "disable bagging");
        base_cmd->add_option("--forest-seed", base_forest.rng_seed, "forest seed");
        FoldArgs base_folds;
        base_cmd->add_option("--folds", base_folds.count, "fold count");
        base_cmd->add_option("--fold-seed", base_folds.seed, "fold shuffle seed");
        std::string base_out;
        base_cmd->add_option("--out", base_out, "output directory")->required();

        // sweep
        auto* sweep_cmd = app.add_subcommand("sweep", "noise x sparsity recovery grid");
        sweep_cmd->fallthrough();
        GeneratorFlags sweep_gen;
        sweep_gen.add_to(sweep_cmd);
        SolverFlags sweep_solver;
        // --K and --seed belong to the generator flags here; route solver
        // seed/K through --fit-seed / hyper K list equal to generator K.
        sweep_solver.o_preset = sweep_cmd->add_option("--preset", sweep_solver.preset,
                                                      "hyperparameter preset");
        sweep_solver.o_gamma =
            sweep_cmd->add_option("--gamma", sweep_solver.hp.gamma, "prediction weight");
        sweep_solver.o_l1 =
            sweep_cmd->add_option("--lambda1", sweep_solver.hp.lambda1, "l1 on B");
        sweep_solver.o_l2 =
            sweep_cmd->add_option("--lambda2", sweep_solver.hp.lambda2, "l2 on C");
        sweep_solver.o_l3 =
            sweep_cmd->add_option("--lambda3", sweep_solver.hp.lambda3, "l2 on w");
        sweep_solver.o_t =
            sweep_cmd->add_option("--step-t", sweep_solver.hp.step_t, "proximal step");
        sweep_solver.o_k = sweep_cmd->add_option("--fit-K", sweep_solver.hp.K,
                                                 "components fit (default = --K)");
        sweep_solver.o_eta0 =
            sweep_cmd->add_option("--eta0", sweep_solver.hp.eta0, "initial dual step");
        sweep_solver.o_eta_decay = sweep_cmd->add_option(
            "--eta-decay", sweep_solver.hp.eta_decay, "dual step decay");
        sweep_solver.o_max_iters = sweep_cmd->add_option(
            "--max-iters", sweep_solver.hp.max_outer_iters, "max outer iterations");
        sweep_solver.o_tol_obj = sweep_cmd->add_option(
            "--tol-objective", sweep_solver.hp.tol_objective, "objective tolerance");
        sweep_solver.o_tol_con = sweep_cmd->add_option(
            "--tol-constraint", sweep_solver.hp.tol_constraint, "constraint tolerance");
        sweep_solver.o_seed = sweep_cmd->add_option("--fit-seed", sweep_solver.hp.rng_seed,
                                                    "training seed salt");
        sweep_solver.o_restarts = sweep_cmd->add_option(
            "--restarts", sweep_solver.trainer.restarts, "random restarts");
        sweep_solver.o_no_ls = sweep_cmd->add_flag(
            "--no-line-search", sweep_solver.no_line_search, "disable backtracking");
        sweep_solver.o_prox = sweep_cmd->add_option(
            "--prox", sweep_solver.prox_variant, "verbatim | standard");
        sweep_solver.o_prox_inner = sweep_cmd->add_option(
            "--prox-inner", sweep_solver.trainer.prox_inner_iters, "inner prox updates");
        sweep_solver.o_trace_every = sweep_cmd->add_option(
            "--trace-every", sweep_solver.trainer.trace_every, "trace stride");
        std::string sweep_sigma = "0.01,0.05,0.1,0.2";
        std::string sweep_sparsity = "0.1,0.2,0.3,0.4";
        int sweep_trials = 5;
        sweep_cmd->add_option("--sigma-grid", sweep_sigma, "comma-separated noise levels");
        sweep_cmd->add_option("--sparsity-grid", sweep_sparsity,
                              "comma-separated sparsity levels");
        sweep_cmd->add_option("--trials", sweep_trials, "trials per cell");
        std::string sweep_out, sweep_config;
        sweep_cmd->add_option("--out", sweep_out, "output directory")->required();
        sweep_cmd->add_option("--config", sweep_config, "JSON config file");

        // grid
        auto* grid_cmd = app.add_subcommand("grid", "hyperparameter grid search");
        grid_cmd->fallthrough();
        DataArgs grid_data;
        add_data_flags(grid_cmd, grid_data, true);
        SolverFlags grid_solver;
        grid_solver.add_to(grid_cmd);
        FoldArgs grid_folds;
        grid_cmd->add_option("--folds", grid_folds.count, "outer fold count");
        grid_cmd->add_option("--fold-seed", grid_folds.seed, "outer fold seed");
        int grid_holdout = -1, grid_inner = 5;
        grid_cmd->add_option("--holdout-fold", grid_holdout,
                             "outer fold excluded from the search (-1 = none)");
        grid_cmd->add_option("--inner-folds", grid_inner, "inner CV fold count");
        std::string grid_out, grid_config;
        grid_cmd->add_option("--out", grid_out, "output directory")->required();
        grid_cmd->add_option("--config", grid_config,
                             "JSON config file (grid lists live here)");

        std::vector<std::string> argv_copy = args;
        std::reverse(argv_copy.begin(), argv_copy.end());
        try {
            app.parse(argv_copy);
        } catch (const CLI::CallForHelp& e) {
            std::cout << app.help();
            return 0;
        } catch (const CLI::ParseError& e) {
            throw ConfigError(e.what());
        }
        parallel::set_max_threads(threads);

        if (app.got_subcommand(synth)) {
            std::optional<ordered_json> cfg;
            if (!synth_config.empty()) cfg = load_json_file(synth_config);
            const ordered_json gen_sec =
                section_or_null(cfg, "generator", {"command", "generator", "output"});
            synth_gen.resolve(gen_sec.is_null() ? nullptr : &gen_sec);
            return cmd_synth(synth_gen.gen, synth_out);
        }
        if (app.got_subcommand(fit_cmd)) {
            std::optional<ordered_json> cfg;
            if (!fit_config.empty()) cfg = load_json_file(fit_config);
            const std::set<std::string> secs = {"command", "data", "hyper", "trainer",
                                                "output"};
            const ordered_json hsec = section_or_null(cfg, "hyper", secs);
            const ordered_json tsec = section_or_null(cfg, "trainer", secs);
            fit_solver.resolve(hsec.is_null() ? nullptr : &hsec,
                               tsec.is_null() ? nullptr : &tsec);
            return cmd_fit(fit_data, fit_solver.trainer, fit_out);
        }
        if (app.got_subcommand(predict_cmd))
            return cmd_predict(pr_checkpoint, pr_matrices, pr_scores, pr_deflate, pr_out);
        if (app.got_subcommand(cv_cmd)) {
            std::optional<ordered_json> cfg;
            if (!cv_config.empty()) cfg = load_json_file(cv_config);
            const std::set<std::string> secs = {"command", "data", "hyper",
                                                "trainer", "folds",  "output"};
            const ordered_json hsec = section_or_null(cfg, "hyper", secs);
            const ordered_json tsec = section_or_null(cfg, "trainer", secs);
            const ordered_json fsec = section_or_null(cfg, "folds", secs);
            cv_solver.resolve(hsec.is_null() ? nullptr : &hsec,
                              tsec.is_null() ? nullptr : &tsec);
            FoldArgs folds;
            if (!fsec.is_null()) folds_from_json(fsec, folds);
            if (*cv_o_folds) folds.count = cv_folds.count;
            if (*cv_o_fseed) folds.seed = cv_folds.seed;
            return cmd_cv(cv_data, cv_solver.trainer, folds, cv_out);
        }
        if (app.got_subcommand(base_cmd)) {
            BaselineConfig bc;
            if (base_which == "pca")
                bc.kind = BaselineKind::Pca;
            else if (base_which == "kpca")
                bc.kind = BaselineKind::Kpca;
            else
                throw ConfigError("--which must be pca or kpca");
            bc.components = base_components > 0
                                ? base_components
                                : (bc.kind == BaselineKind::Pca ? 15 : 10);
            bc.rbf_coeff = base_rbf;
            bc.forest = base_forest;
            if (base_max_depth > 0) bc.forest.max_depth = base_max_depth;
            if (base_no_bootstrap) bc.forest.bootstrap = false;
            return cmd_baseline(base_data, bc, base_folds, base_out);
        }
        if (app.got_subcommand(sweep_cmd)) {
            std::optional<ordered_json> cfg;
            if (!sweep_config.empty()) cfg = load_json_file(sweep_config);
            const std::set<std::string> secs = {"command", "generator", "hyper",
                                                "trainer", "sweep",     "output"};
            const ordered_json gsec = section_or_null(cfg, "generator", secs);
            const ordered_json hsec = section_or_null(cfg, "hyper", secs);
            const ordered_json tsec = section_or_null(cfg, "trainer", secs);
            sweep_gen.resolve(gsec.is_null() ? nullptr : &gsec);
            sweep_solver.resolve(hsec.is_null() ? nullptr : &hsec,
                                 tsec.is_null() ? nullptr : &tsec);
            if (!*sweep_solver.o_k) {
                sweep_solver.hp.K = sweep_gen.gen.K_true;
                sweep_solver.trainer.hp.K = sweep_gen.gen.K_true;
            }
            std::vector<double> sigma_grid = parse_grid_list(sweep_sigma, "--sigma-grid");
            std::vector<double> sparsity_grid =
                parse_grid_list(sweep_sparsity, "--sparsity-grid");
            int trials = sweep_trials;
            if (cfg && cfg->contains("sweep")) {
                const ordered_json& sj = cfg->at("sweep");
                reject_unknown(sj, {"sigma_grid", "sparsity_grid", "trials"},
                               "sweep section");
                if (sj.contains("sigma_grid"))
                    sigma_grid = sj.at("sigma_grid").get<std::vector<double>>();
                if (sj.contains("sparsity_grid"))
                    sparsity_grid = sj.at("sparsity_grid").get<std::vector<double>>();
                take(sj, "trials", trials);
            }
            return cmd_sweep(sweep_gen.gen, sweep_solver.trainer, sigma_grid,
                             sparsity_grid, trials, sweep_out);
        }
        if (app.got_subcommand(grid_cmd)) {
            std::optional<ordered_json> cfg;
            if (!grid_config.empty()) cfg = load_json_file(grid_config);
            const std::set<std::string> secs = {"command", "data",  "hyper", "trainer",
                                                "folds",   "grid",  "output"};
            const ordered_json hsec = section_or_null(cfg, "hyper", secs);
            const ordered_json tsec = section_or_null(cfg, "trainer", secs);
            grid_solver.resolve(hsec.is_null() ? nullptr : &hsec,
                                tsec.is_null() ? nullptr : &tsec);
            GridLists lists;
            int holdout = grid_holdout, inner = grid_inner;
            if (cfg && cfg->contains("grid")) {
                const ordered_json& gj = cfg->at("grid");
                reject_unknown(gj, {"lists", "holdout_fold", "inner_folds"},
                               "grid section");
                if (gj.contains("lists")) {
                    const ordered_json& lj = gj.at("lists");
                    reject_unknown(lj, {"gamma", "lambda1", "lambda2", "lambda3", "K"},
                                   "grid lists");
                    if (lj.contains("gamma"))
                        lists.gamma = lj.at("gamma").get<std::vector<double>>();
                    if (lj.contains("lambda1"))
                        lists.lambda1 = lj.at("lambda1").get<std::vector<double>>();
                    if (lj.contains("lambda2"))
                        lists.lambda2 = lj.at("lambda2").get<std::vector<double>>();
                    if (lj.contains("lambda3"))
                        lists.lambda3 = lj.at("lambda3").get<std::vector<double>>();
                    if (lj.contains("K")) lists.K = lj.at("K").get<std::vector<int>>();
                }
                take(gj, "holdout_fold", holdout);
                take(gj, "inner_folds", inner);
            }
            return cmd_grid(grid_data, grid_solver.trainer, lists, grid_folds, holdout,
                            inner, grid_out);
        }
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace netfact
