#include "survkan/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "survkan/expr.hpp"

namespace survkan {

using nlohmann::json;

std::vector<double> Dataset::column(int c) const {
    std::vector<double> out(n_rows);
    for (int r = 0; r < n_rows; ++r) out[r] = at(r, c);
    return out;
}

namespace {

struct FormulaDef {
    int n_signal;                       // covariate count used by theta
    std::vector<std::pair<double, double>> ranges;  // per signal covariate
    std::string expr;                   // in terms of x1..xn
};

FormulaDef named_formula(const std::string& name,
                         const std::vector<double>& beta) {
    if (name == "gaussian")
        return {2, {{-1, 1}, {-1, 1}}, "5*exp(-2*(x1^2 + x2^2))"};
    if (name == "shallow")
        return {3, {{-1, 1}, {-1, 1}, {-1, 1}},
                "tanh(5*x1) + sin(2*pi*x2) + x3^2"};
    if (name == "deep")
        return {4, {{-1, 1}, {-1, 1}, {-1, 1}, {-1, 1}},
                "2*sqrt((x1-x2)^2 + (x3-x4)^2)"};
    if (name == "difficult")
        return {2, {{0.1, 1}, {-1, 1}}, "tanh(5*(log(x1) + abs(x2)))"};
    if (name == "linear") {
        FormulaDef def;
        def.n_signal = static_cast<int>(beta.size());
        std::ostringstream expr;
        for (int i = 0; i < def.n_signal; ++i) {
            def.ranges.push_back({-1, 1});
            if (i) expr << " + ";
            expr << beta[i] << "*x" << (i + 1);
        }
        def.expr = expr.str();
        return def;
    }
    if (name.rfind("custom:", 0) == 0) {
        const std::string text = name.substr(7);
        CompiledExpr ce(text);  // throws ExprError on bad input
        FormulaDef def;
        def.n_signal = ce.max_var();
        def.ranges.assign(def.n_signal, {-1, 1});
        def.expr = text;
        return def;
    }
    throw std::invalid_argument("unknown formula: " + name);
}

}  // namespace

GeneratedData generate(const GeneratorSpec& spec) {
    if (spec.n_train < 1 || spec.n_test < 1)
        throw std::invalid_argument("generate: n_train and n_test must be >= 1");
    if (!(spec.baseline > 0))
        throw std::invalid_argument("generate: baseline must be > 0");
    const FormulaDef def = named_formula(spec.formula, spec.linear_beta);
    CompiledExpr expr(def.expr);
    const int n = spec.n_train + spec.n_test;
    const int d = def.n_signal + spec.noise_features;

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    std::vector<double> X(static_cast<std::size_t>(n) * d);
    std::vector<double> theta(n), death(n);
    double max_death = 0.0;
    for (int r = 0; r < n; ++r) {
        double* row = X.data() + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < def.n_signal; ++c) {
            const auto [lo, hi] = def.ranges[c];
            row[c] = lo + (hi - lo) * u01(rng);
        }
        for (int c = def.n_signal; c < d; ++c) row[c] = -1.0 + 2.0 * u01(rng);
        theta[r] = expr.eval({row, static_cast<std::size_t>(d)});
        if (!std::isfinite(theta[r]))
            throw std::invalid_argument("generate: formula non-finite at row " +
                                        std::to_string(r));
        const double rate = spec.baseline * std::exp(theta[r]);
        death[r] = -std::log1p(-u01(rng)) / rate;
        max_death = std::max(max_death, death[r]);
    }

    SurvivalOutcome outcome;
    outcome.durations.resize(n);
    outcome.events.resize(n);
    for (int r = 0; r < n; ++r) {
        const double tc = max_death * u01(rng);
        outcome.durations[r] = std::max(std::min(death[r], tc), 1e-12);
        outcome.events[r] = death[r] <= tc ? 1 : 0;
    }

    const auto build = [&](int begin, int count) {
        Dataset ds;
        ds.n_rows = count;
        ds.n_cols = d;
        ds.X.assign(X.begin() + static_cast<std::size_t>(begin) * d,
                    X.begin() + static_cast<std::size_t>(begin + count) * d);
        for (int c = 0; c < d; ++c) {
            ColumnMeta m;
            m.name = "x" + std::to_string(c + 1);
            ds.columns.push_back(std::move(m));
        }
        ds.outcome.durations.assign(outcome.durations.begin() + begin,
                                    outcome.durations.begin() + begin + count);
        ds.outcome.events.assign(outcome.events.begin() + begin,
                                 outcome.events.begin() + begin + count);
        Provenance prov;
        prov.formula = spec.formula == "linear" ? "custom:" + def.expr : spec.formula;
        prov.seed = spec.seed;
        prov.baseline = spec.baseline;
        prov.true_theta.assign(theta.begin() + begin, theta.begin() + begin + count);
        ds.provenance = std::move(prov);
        return ds;
    };

    GeneratedData gd;
    gd.train = build(0, spec.n_train);
    gd.test = build(spec.n_train, spec.n_test);
    return gd;
}

std::vector<double> true_theta(const Dataset& ds) {
    if (!ds.provenance)
        throw std::invalid_argument("true_theta: dataset has no provenance");
    std::string f = ds.provenance->formula;
    if (f.rfind("custom:", 0) == 0) f = f.substr(7);
    else f = named_formula(f, {}).expr;
    CompiledExpr expr(f);
    std::vector<double> theta(ds.n_rows);
    for (int r = 0; r < ds.n_rows; ++r) theta[r] = expr.eval(ds.row(r));
    return theta;
}

// --- CSV ----------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw DataError(path + ": empty file");
    const auto header = split_csv_line(line);

    int dur_col = -1, ev_col = -1;
    std::vector<int> cov_cols;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        if (header[c] == schema.duration_column) dur_col = c;
        else if (header[c] == schema.event_column) ev_col = c;
        else cov_cols.push_back(c);
    }
    if (dur_col < 0) throw DataError(path + ": missing column " + schema.duration_column);
    if (ev_col < 0) throw DataError(path + ": missing column " + schema.event_column);

    Dataset ds;
    ds.n_cols = static_cast<int>(cov_cols.size());
    std::vector<bool> is_cat(ds.n_cols, false);
    std::vector<std::map<std::string, int>> codes(ds.n_cols);
    for (int c = 0; c < ds.n_cols; ++c) {
        ColumnMeta m;
        m.name = header[cov_cols[c]];
        for (const auto& cc : schema.categorical_columns)
            if (cc == m.name) {
                m.categorical = true;
                is_cat[c] = true;
            }
        ds.columns.push_back(std::move(m));
    }

    int row_no = 1;
    while (std::getline(f, line)) {
        ++row_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError(path + ": row " + std::to_string(row_no) +
                            " has wrong field count");
        const auto parse_real = [&](const std::string& s, const std::string& what) {
            try {
                std::size_t used = 0;
                const double v = std::stod(s, &used);
                if (used != s.size()) throw std::invalid_argument(s);
                return v;
            } catch (const std::exception&) {
                throw DataError(path + ": row " + std::to_string(row_no) +
                                ": unparseable " + what + " '" + s + "'");
            }
        };
        const double dur = parse_real(cells[dur_col], "duration");
        if (!(dur > 0))
            throw DataError(path + ": row " + std::to_string(row_no) +
                            ": nonpositive duration");
        const std::string& ev = cells[ev_col];
        if (ev != "0" && ev != "1")
            throw DataError(path + ": row " + std::to_string(row_no) +
                            ": event must be 0 or 1, got '" + ev + "'");
        for (int c = 0; c < ds.n_cols; ++c) {
            const std::string& cell = cells[cov_cols[c]];
            if (is_cat[c]) {
                auto [it, inserted] =
                    codes[c].try_emplace(cell, static_cast<int>(codes[c].size()));
                if (inserted) ds.columns[c].categories.push_back(cell);
                ds.X.push_back(it->second);
            } else {
                ds.X.push_back(parse_real(cell, "value in " + ds.columns[c].name));
            }
        }
        ds.outcome.durations.push_back(dur);
        ds.outcome.events.push_back(ev == "1" ? 1 : 0);
        ++ds.n_rows;
    }
    return ds;
}

// --- standardization ----------------------------------------------------

StandardizeStats standardize(Dataset& ds) {
    StandardizeStats st;
    st.mean.assign(ds.n_cols, std::nullopt);
    st.stddev.assign(ds.n_cols, std::nullopt);
    for (int c = 0; c < ds.n_cols; ++c) {
        if (ds.columns[c].categorical) continue;
        double mean = 0.0;
        for (int r = 0; r < ds.n_rows; ++r) mean += ds.at(r, c);
        mean /= ds.n_rows;
        double var = 0.0;
        for (int r = 0; r < ds.n_rows; ++r) {
            const double dv = ds.at(r, c) - mean;
            var += dv * dv;
        }
        var /= ds.n_rows;
        if (var <= 0.0) {
            st.zero_variance_columns.push_back(c);
            continue;
        }
        const double sd = std::sqrt(var);
        st.mean[c] = mean;
        st.stddev[c] = sd;
        for (int r = 0; r < ds.n_rows; ++r)
            ds.X[static_cast<std::size_t>(r) * ds.n_cols + c] =
                (ds.at(r, c) - mean) / sd;
        ds.columns[c].mean = mean;
        ds.columns[c].stddev = sd;
    }
    return st;
}

void apply_standardization(Dataset& ds, const StandardizeStats& stats) {
    if (static_cast<int>(stats.mean.size()) != ds.n_cols)
        throw std::invalid_argument("apply_standardization: column count mismatch");
    for (int c = 0; c < ds.n_cols; ++c) {
        if (!stats.mean[c]) continue;
        const double m = *stats.mean[c], sd = *stats.stddev[c];
        for (int r = 0; r < ds.n_rows; ++r)
            ds.X[static_cast<std::size_t>(r) * ds.n_cols + c] =
                (ds.at(r, c) - m) / sd;
        ds.columns[c].mean = m;
        ds.columns[c].stddev = sd;
    }
}

void invert_standardization(Dataset& ds, const StandardizeStats& stats) {
    for (int c = 0; c < ds.n_cols; ++c) {
        if (!stats.mean[c]) continue;
        const double m = *stats.mean[c], sd = *stats.stddev[c];
        for (int r = 0; r < ds.n_rows; ++r)
            ds.X[static_cast<std::size_t>(r) * ds.n_cols + c] =
                ds.at(r, c) * sd + m;
        ds.columns[c].mean.reset();
        ds.columns[c].stddev.reset();
    }
}

// --- splitting ----------------------------------------------------------

Dataset take_rows(const Dataset& ds, std::span<const int> rows) {
    Dataset out;
    out.n_cols = ds.n_cols;
    out.columns = ds.columns;
    out.n_rows = static_cast<int>(rows.size());
    out.X.reserve(rows.size() * ds.n_cols);
    for (int r : rows) {
        const auto row = ds.row(r);
        out.X.insert(out.X.end(), row.begin(), row.end());
        out.outcome.durations.push_back(ds.outcome.durations[r]);
        out.outcome.events.push_back(ds.outcome.events[r]);
    }
    if (ds.provenance) {
        Provenance p = *ds.provenance;
        p.true_theta.clear();
        for (int r : rows)
            if (r < static_cast<int>(ds.provenance->true_theta.size()))
                p.true_theta.push_back(ds.provenance->true_theta[r]);
        out.provenance = std::move(p);
    }
    return out;
}

namespace {

// (event x duration-quantile) buckets; small buckets merge into the
// neighbouring bin.
std::vector<std::vector<int>> make_buckets(const Dataset& ds, int bins,
                                           int* merged) {
    std::vector<double> durs = ds.outcome.durations;
    std::sort(durs.begin(), durs.end());
    const auto bin_of = [&](double t) {
        const auto it = std::lower_bound(durs.begin(), durs.end(), t);
        int b = static_cast<int>((it - durs.begin()) * static_cast<std::size_t>(bins) /
                                 durs.size());
        return std::min(b, bins - 1);
    };
    std::vector<std::vector<int>> buckets(2 * bins);
    for (int r = 0; r < ds.n_rows; ++r)
        buckets[ds.outcome.events[r] * bins + bin_of(ds.outcome.durations[r])]
            .push_back(r);
    // merge undersized buckets rightwards within the same event stratum
    for (int e = 0; e < 2; ++e)
        for (int b = 0; b < bins; ++b) {
            auto& cur = buckets[e * bins + b];
            if (!cur.empty() && cur.size() < 2) {
                int nb = b + 1 < bins ? b + 1 : b - 1;
                if (nb >= 0) {
                    auto& dst = buckets[e * bins + nb];
                    dst.insert(dst.end(), cur.begin(), cur.end());
                    cur.clear();
                    if (merged) ++*merged;
                }
            }
        }
    return buckets;
}

}  // namespace

SplitResult stratified_split(const Dataset& ds, double test_fraction, int bins,
                             std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("stratified_split: test_fraction in (0,1)");
    SplitResult res;
    auto buckets = make_buckets(ds, bins, &res.merged_buckets);
    std::vector<int> train_rows, test_rows;
    std::mt19937_64 rng(seed);
    for (auto& bucket : buckets) {
        std::shuffle(bucket.begin(), bucket.end(), rng);
        const int n_test = static_cast<int>(
            std::lround(test_fraction * static_cast<double>(bucket.size())));
        for (int i = 0; i < static_cast<int>(bucket.size()); ++i)
            (i < n_test ? test_rows : train_rows).push_back(bucket[i]);
    }
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(test_rows.begin(), test_rows.end());
    res.train = take_rows(ds, train_rows);
    res.test = take_rows(ds, test_rows);
    return res;
}

std::vector<std::vector<int>> stratified_folds(const Dataset& ds, int folds,
                                               std::uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("stratified_folds: folds >= 2");
    std::vector<int> ev_rows, cen_rows;
    for (int r = 0; r < ds.n_rows; ++r)
        (ds.outcome.events[r] ? ev_rows : cen_rows).push_back(r);
    std::mt19937_64 rng(seed);
    std::shuffle(ev_rows.begin(), ev_rows.end(), rng);
    std::shuffle(cen_rows.begin(), cen_rows.end(), rng);
    std::vector<std::vector<int>> out(folds);
    for (std::size_t i = 0; i < ev_rows.size(); ++i)
        out[i % folds].push_back(ev_rows[i]);
    for (std::size_t i = 0; i < cen_rows.size(); ++i)
        out[(i + 1) % folds].push_back(cen_rows[i]);
    for (auto& f : out) std::sort(f.begin(), f.end());
    for (const auto& f : out) {
        bool any_event = false;
        for (int r : f) any_event |= ds.outcome.events[r] != 0;
        if (!any_event)
            throw DataError("stratified_folds: a fold has no events");
    }
    return out;
}

// --- persistence --------------------------------------------------------

void save_dataset(const Dataset& ds, const std::string& csv_path) {
    std::ofstream f(csv_path);
    if (!f) throw DataError("cannot write " + csv_path);
    for (const auto& c : ds.columns) f << c.name << ',';
    f << "duration,event\n";
    f.precision(17);
    for (int r = 0; r < ds.n_rows; ++r) {
        for (int c = 0; c < ds.n_cols; ++c) {
            if (ds.columns[c].categorical)
                f << ds.columns[c].categories[static_cast<int>(ds.at(r, c))];
            else
                f << ds.at(r, c);
            f << ',';
        }
        f << ds.outcome.durations[r] << ',' << int(ds.outcome.events[r]) << '\n';
    }
}

void save_meta(const GeneratedData& gd, const std::string& meta_path) {
    json j;
    json cols = json::array();
    for (const auto& c : gd.train.columns) {
        json jc;
        jc["name"] = c.name;
        jc["categorical"] = c.categorical;
        if (c.categorical) jc["categories"] = c.categories;
        cols.push_back(std::move(jc));
    }
    j["columns"] = std::move(cols);
    if (gd.train.provenance) {
        const auto& p = *gd.train.provenance;
        j["provenance"] = {{"formula", p.formula},
                           {"seed", p.seed},
                           {"baseline", p.baseline}};
    }
    j["n_train"] = gd.train.n_rows;
    j["n_test"] = gd.test.n_rows;
    std::ofstream f(meta_path);
    if (!f) throw DataError("cannot write " + meta_path);
    f << j.dump(2) << '\n';
}

}  // namespace survkan
