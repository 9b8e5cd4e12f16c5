// survkan command line: generate | train | search | evaluate | symbolic | plot.
// Exit codes: 0 success, 2 usage error, 3 data/state error, 4 numerical failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "survkan/cox.hpp"
#include "survkan/data.hpp"
#include "survkan/expr.hpp"
#include "survkan/network.hpp"
#include "survkan/plot.hpp"
#include "survkan/symbolic.hpp"
#include "survkan/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace survkan;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << text;
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

Dataset load_data(const std::string& path, const std::string& duration_col,
                  const std::string& event_col,
                  const std::vector<std::string>& categorical) {
    CsvSchema schema;
    if (!duration_col.empty()) schema.duration_column = duration_col;
    if (!event_col.empty()) schema.event_column = event_col;
    schema.categorical_columns = categorical;
    return load_csv(path, schema);
}

std::vector<std::string> feature_names(const Dataset& ds) {
    std::vector<std::string> names;
    for (const auto& c : ds.columns) names.push_back(c.name);
    return names;
}

void apply_input_meta(Network& net, const Dataset& ds) {
    for (int i = 0; i < ds.n_cols; ++i) {
        net.input_meta[i].categorical = ds.columns[i].categorical;
        net.input_meta[i].n_categories =
            static_cast<int>(ds.columns[i].categories.size());
    }
}

void write_history_csv(const TrainHistory& h, const std::string& path) {
    std::ostringstream ss;
    ss.precision(17);
    ss << "step,train_loss,penalty,val_c_index\n";
    for (std::size_t s = 0; s < h.train_loss.size(); ++s) {
        ss << s << ',' << h.train_loss[s] << ',' << h.penalty_total[s] << ',';
        if (s < h.val_c_index.size()) ss << h.val_c_index[s];
        ss << '\n';
    }
    write_file(path, ss.str());
}

json stage_report(std::span<const double> theta, const SurvivalOutcome& y,
                  int n_bootstrap, std::uint64_t seed) {
    const EvalReport r = bootstrap_ci(theta, y, n_bootstrap, seed);
    return {{"c_index", r.c_index},
            {"ci_low", r.ci_low},
            {"ci_high", r.ci_high},
            {"n_bootstrap", r.n_bootstrap},
            {"redraws", r.redraws}};
}

bool has_symbolic(const Network& net) {
    for (const auto& layer : net.layers)
        for (const auto& a : layer)
            if (a.active && !a.symbolic) return false;
    return true;
}

std::vector<int> inactive_inputs(const Network& net) {
    std::vector<int> dropped;
    for (int i = 0; i < net.shape[0]; ++i) {
        bool any = false;
        for (int j = 0; j < net.shape[1]; ++j)
            if (net.edge(0, j, i).active) any = true;
        if (!any) dropped.push_back(i);
    }
    return dropped;
}

// --- subcommands --------------------------------------------------------

int cmd_generate(const std::string& formula, const std::vector<double>& beta,
                 int n_train, int n_test, int noise, double baseline,
                 std::uint64_t seed, const std::string& out) {
    const std::string known[] = {"gaussian", "shallow", "deep", "difficult",
                                 "linear"};
    bool ok = false;
    for (const auto& k : known) ok = ok || formula == k;
    if (formula.rfind("custom:", 0) == 0) {
        CompiledExpr check(formula.substr(7));  // validate before writing
        ok = true;
    }
    if (!ok) throw UsageError("unknown formula: " + formula);

    GeneratorSpec spec;
    spec.formula = formula;
    if (!beta.empty()) spec.linear_beta = beta;
    spec.n_train = n_train;
    spec.n_test = n_test;
    spec.noise_features = noise;
    spec.baseline = baseline;
    spec.seed = seed;
    const GeneratedData gd = generate(spec);
    fs::create_directories(out);
    save_dataset(gd.train, out + "/train.csv");
    save_dataset(gd.test, out + "/test.csv");
    save_meta(gd, out + "/meta.json");
    std::cout << "wrote " << out << "/train.csv (" << gd.train.n_rows
              << " rows), test.csv (" << gd.test.n_rows << " rows), meta.json\n";
    return 0;
}

int cmd_train(const std::string& data_path, const std::string& config_path,
              const std::string& out, std::optional<std::uint64_t> seed,
              bool do_standardize, const std::string& duration_col,
              const std::string& event_col,
              const std::vector<std::string>& categorical) {
    const auto t0 = std::chrono::steady_clock::now();
    Dataset ds = load_data(data_path, duration_col, event_col, categorical);
    if (do_standardize) standardize(ds);

    TrainConfig cfg;
    if (!config_path.empty()) cfg = TrainConfig::from_json(read_file(config_path));
    if (seed) cfg.seed = *seed;

    Network net = init_network(cfg.full_shape(ds.n_cols), cfg.base_kind, cfg.grid,
                               3, cfg.xi_b, cfg.xi_s, cfg.seed);
    apply_input_meta(net, ds);
    TrainResult res = train(net, ds, cfg);
    AutoPruneResult pruned = auto_prune(res.net, ds, cfg);

    fs::create_directories(out);
    save_network(res.net, out + "/model_trained.json");
    save_network(pruned.net, out + "/model_pruned.json");
    save_network(pruned.net, out + "/model.json");
    write_history_csv(res.history, out + "/history.csv");
    write_file(out + "/config.json", cfg.to_json());

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    json meta = {{"data", data_path},
                 {"prune_threshold", pruned.threshold},
                 {"dropped_inputs", pruned.dropped_inputs},
                 {"standardized", do_standardize},
                 {"seconds", secs}};
    write_file(out + "/train_meta.json", meta.dump(2) + "\n");
    std::cout << "trained; prune threshold " << pruned.threshold << ", dropped "
              << pruned.dropped_inputs.size() << " input(s), " << secs << " s\n";
    return 0;
}

int cmd_search(const std::string& data_path, int trials, std::uint64_t seed,
               int jobs, int folds, const std::string& out,
               const std::string& space_path, bool do_standardize,
               const std::string& duration_col, const std::string& event_col,
               const std::vector<std::string>& categorical) {
    Dataset ds = load_data(data_path, duration_col, event_col, categorical);
    if (do_standardize) standardize(ds);
    SearchSpace space;
    if (!space_path.empty()) space = SearchSpace::from_json(read_file(space_path));
    const SearchResult res = random_search(ds, space, trials, seed, folds, jobs);
    fs::create_directories(out);
    write_leaderboard_csv(res, out + "/leaderboard.csv");
    write_file(out + "/best_config.json", res.best.to_json());
    double best_c = 0.0;
    for (const auto& t : res.leaderboard) best_c = std::max(best_c, t.mean_c);
    std::cout << "search done: " << trials << " trials, best mean C " << best_c
              << "\n";
    return 0;
}

int cmd_symbolic(const std::string& run, const std::string& data_path,
                 int finetune_steps, bool do_standardize,
                 const std::string& duration_col, const std::string& event_col,
                 const std::vector<std::string>& categorical) {
    if (!fs::exists(run + "/model.json"))
        throw StateError("no model.json in " + run +
                         " (run `train` before `symbolic`)");
    Dataset ds = load_data(data_path, duration_col, event_col, categorical);
    if (do_standardize) standardize(ds);
    Network net = load_network(run + "/model.json");
    if (net.shape[0] != ds.n_cols)
        throw DataError("model expects " + std::to_string(net.shape[0]) +
                        " covariates, data has " + std::to_string(ds.n_cols));

    const ForwardCache cache = forward(net, ds.X, ds.n_rows);
    auto_symbolic(net, cache);
    const FinetuneResult ft = finetune_affine(net, ds, finetune_steps);

    Formula f = render_formula(net, feature_names(ds));
    term_importance(f, ds.X, ds.n_rows);
    write_file(run + "/formula.txt", formula_text(f) + "\n");
    write_file(run + "/formula.json", formula_json(f) + "\n");
    save_network(net, run + "/model_symbolic.json");
    save_network(net, run + "/model.json");
    std::cout << "formula: " << formula_text(f) << "\n";
    if (ft.diverged)
        std::cout << "finetune diverged; kept the grid-fit parameters\n";
    return 0;
}

int cmd_evaluate(const std::string& run, const std::string& data_path,
                 int n_bootstrap, std::uint64_t seed, const std::string& out,
                 bool do_standardize, const std::string& duration_col,
                 const std::string& event_col,
                 const std::vector<std::string>& categorical) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!fs::exists(run + "/model_trained.json"))
        throw StateError("no model_trained.json in " + run +
                         " (run `train` before `evaluate`)");
    const std::string raw = read_file(data_path);
    Dataset ds = load_data(data_path, duration_col, event_col, categorical);
    if (do_standardize) standardize(ds);

    json rep;
    rep["data"] = {{"path", data_path},
                   {"fingerprint", fnv1a(raw)},
                   {"n_rows", ds.n_rows},
                   {"n_events", ds.outcome.n_events()}};
    rep["bootstrap"] = {{"n", n_bootstrap}, {"seed", seed}};
    if (fs::exists(run + "/config.json"))
        rep["config"] = json::parse(read_file(run + "/config.json"));

    json stages;
    {
        const Network net = load_network(run + "/model_trained.json");
        const ForwardCache c = forward(net, ds.X, ds.n_rows);
        stages["trained"] = stage_report(c.theta(), ds.outcome, n_bootstrap, seed);
    }
    if (fs::exists(run + "/model_pruned.json")) {
        const Network net = load_network(run + "/model_pruned.json");
        const ForwardCache c = forward(net, ds.X, ds.n_rows);
        stages["pruned"] = stage_report(c.theta(), ds.outcome, n_bootstrap, seed);
        json names = json::array();
        for (int i : inactive_inputs(net)) names.push_back(ds.columns[i].name);
        rep["dropped_features"] = std::move(names);
    }
    if (fs::exists(run + "/model_symbolic.json")) {
        Network net = load_network(run + "/model_symbolic.json");
        if (has_symbolic(net)) {
            const auto theta = symbolic_forward(net, ds.X, ds.n_rows);
            stages["symbolic"] =
                stage_report(theta, ds.outcome, n_bootstrap, seed);
            Formula f = render_formula(net, feature_names(ds));
            term_importance(f, ds.X, ds.n_rows);
            rep["formula"] = formula_text(f);
        }
    }
    {
        const CoxPHModel m = coxph_fit(ds.X, ds.n_rows, ds.n_cols, ds.outcome);
        const auto theta = coxph_predict(m, ds.X, ds.n_rows);
        stages["coxph"] = stage_report(theta, ds.outcome, n_bootstrap, seed);
    }
    rep["stages"] = std::move(stages);
    rep["seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    const std::string path = out.empty() ? run + "/report.json" : out;
    write_file(path, rep.dump(2) + "\n");
    std::cout << "wrote " << path << "\n";
    return 0;
}

int cmd_plot(const std::string& run, const std::string& data_path,
             const std::string& out, bool do_standardize,
             const std::string& duration_col, const std::string& event_col,
             const std::vector<std::string>& categorical) {
    if (!fs::exists(run + "/model.json"))
        throw StateError("no model.json in " + run +
                         " (run `train` before `plot`)");
    Dataset ds = load_data(data_path, duration_col, event_col, categorical);
    if (do_standardize) standardize(ds);
    const Network net = load_network(run + "/model.json");
    const ForwardCache cache = forward(net, ds.X, ds.n_rows);
    const std::string dir = out.empty() ? run + "/plots" : out;
    plot_edges(net, cache, dir);
    int count = 0;
    for (const auto& layer : net.layers)
        for (const auto& a : layer)
            if (a.active) ++count;
    std::cout << "wrote " << count << " SVG(s) to " << dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Survival KAN pipeline"};
    app.require_subcommand(1);

    // shared CSV options, duplicated per data-consuming subcommand
    struct CsvOpts {
        std::string duration = "duration", event = "event";
        std::vector<std::string> categorical;
        bool standardize = false;
    };
    const auto add_csv_opts = [](CLI::App* c, CsvOpts& o) {
        c->add_option("--duration-col", o.duration, "duration column name");
        c->add_option("--event-col", o.event, "event column name");
        c->add_option("--categorical", o.categorical,
                      "categorical column names")->delimiter(',');
        c->add_flag("--standardize", o.standardize,
                    "z-score continuous covariates");
    };

    // generate
    auto* gen = app.add_subcommand("generate", "write a synthetic dataset");
    std::string g_formula = "gaussian", g_out = "data";
    std::vector<double> g_beta;
    int g_train = 8000, g_test = 2000, g_noise = 2;
    double g_baseline = 0.01;
    std::uint64_t g_seed = 0;
    gen->add_option("--formula", g_formula,
                    "gaussian|shallow|deep|difficult|linear|custom:<expr>");
    gen->add_option("--beta", g_beta, "coefficients for --formula linear")
        ->delimiter(',');
    gen->add_option("--n-train", g_train);
    gen->add_option("--n-test", g_test);
    gen->add_option("--noise", g_noise, "extra noise covariates");
    gen->add_option("--baseline", g_baseline, "baseline hazard rate");
    gen->add_option("--seed", g_seed);
    gen->add_option("--out", g_out, "output directory");

    // train
    auto* tr = app.add_subcommand("train", "train + auto-prune a model");
    std::string t_data, t_config, t_out = "run";
    CsvOpts t_csv;
    std::optional<std::uint64_t> t_seed;
    tr->add_option("--data", t_data, "training CSV")->required();
    tr->add_option("--config", t_config, "TrainConfig JSON");
    tr->add_option("--out", t_out, "run directory");
    tr->add_option("--seed", t_seed, "override the config seed");
    add_csv_opts(tr, t_csv);

    // search
    auto* se = app.add_subcommand("search", "random hyperparameter search");
    std::string s_data, s_space, s_out = "run";
    int s_trials = 30, s_jobs = 1, s_folds = 4;
    std::uint64_t s_seed = 0;
    CsvOpts s_csv;
    se->add_option("--data", s_data, "training CSV")->required();
    se->add_option("--trials", s_trials);
    se->add_option("--seed", s_seed);
    se->add_option("--jobs", s_jobs, "parallel trials");
    se->add_option("--folds", s_folds);
    se->add_option("--space", s_space, "SearchSpace JSON");
    se->add_option("--out", s_out, "run directory");
    add_csv_opts(se, s_csv);

    // symbolic
    auto* sy = app.add_subcommand("symbolic", "fit symbolic edges + formula");
    std::string y_run = "run", y_data;
    int y_finetune = 50;
    CsvOpts y_csv;
    sy->add_option("--run", y_run, "run directory");
    sy->add_option("--data", y_data, "training CSV")->required();
    sy->add_option("--finetune-steps", y_finetune);
    add_csv_opts(sy, y_csv);

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "C-index report per stage");
    std::string e_run = "run", e_data, e_out;
    int e_boot = 1000;
    std::uint64_t e_seed = 0;
    CsvOpts e_csv;
    ev->add_option("--run", e_run, "run directory");
    ev->add_option("--data", e_data, "evaluation CSV")->required();
    ev->add_option("--bootstrap", e_boot);
    ev->add_option("--seed", e_seed);
    ev->add_option("--out", e_out, "report path (default <run>/report.json)");
    add_csv_opts(ev, e_csv);

    // plot
    auto* pl = app.add_subcommand("plot", "per-edge SVG panels");
    std::string p_run = "run", p_data, p_out;
    CsvOpts p_csv;
    pl->add_option("--run", p_run, "run directory");
    pl->add_option("--data", p_data, "training CSV")->required();
    pl->add_option("--out", p_out, "plot directory (default <run>/plots)");
    add_csv_opts(pl, p_csv);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed())
            return cmd_generate(g_formula, g_beta, g_train, g_test, g_noise,
                                g_baseline, g_seed, g_out);
        if (tr->parsed())
            return cmd_train(t_data, t_config, t_out, t_seed, t_csv.standardize,
                             t_csv.duration, t_csv.event, t_csv.categorical);
        if (se->parsed())
            return cmd_search(s_data, s_trials, s_seed, s_jobs, s_folds, s_out,
                              s_space, s_csv.standardize, s_csv.duration,
                              s_csv.event, s_csv.categorical);
        if (sy->parsed())
            return cmd_symbolic(y_run, y_data, y_finetune, y_csv.standardize,
                                y_csv.duration, y_csv.event, y_csv.categorical);
        if (ev->parsed())
            return cmd_evaluate(e_run, e_data, e_boot, e_seed, e_out,
                                e_csv.standardize, e_csv.duration, e_csv.event,
                                e_csv.categorical);
        if (pl->parsed())
            return cmd_plot(p_run, p_data, p_out, p_csv.standardize,
                            p_csv.duration, p_csv.event, p_csv.categorical);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ExprError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const StateError& e) {
        std::cerr << "invalid state: " << e.what() << "\n";
        return 3;
    } catch (const DivergedError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const UndefinedMetric& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const UnfittableOperator& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
