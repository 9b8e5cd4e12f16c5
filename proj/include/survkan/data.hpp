#pragma once

// Synthetic survival-data generation, CSV ingestion, standardization,
// label encoding, and stratified splitting.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "survkan/cox.hpp"

namespace survkan {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ColumnMeta {
    std::string name;
    bool categorical = false;
    std::vector<std::string> categories;  // label per code, first-appearance order
    // present iff the column has been standardized
    std::optional<double> mean;
    std::optional<double> stddev;
};

struct Provenance {
    std::string formula;      // named formula or custom expression text
    std::uint64_t seed = 0;
    double baseline = 0.01;
    std::vector<double> true_theta;  // per-row ground truth log-partial hazard
};

struct Dataset {
    std::vector<double> X;  // row-major
    int n_rows = 0;
    int n_cols = 0;
    std::vector<ColumnMeta> columns;
    SurvivalOutcome outcome;
    std::optional<Provenance> provenance;

    std::span<const double> row(int r) const {
        return {X.data() + static_cast<std::size_t>(r) * n_cols,
                static_cast<std::size_t>(n_cols)};
    }
    double at(int r, int c) const {
        return X[static_cast<std::size_t>(r) * n_cols + c];
    }
    std::vector<double> column(int c) const;
};

struct GeneratorSpec {
    // gaussian | shallow | deep | difficult | linear | custom:<expr>
    std::string formula = "gaussian";
    std::vector<double> linear_beta = {1.0};  // for formula == linear
    int n_train = 8000;
    int n_test = 2000;
    double baseline = 0.01;
    int noise_features = 2;
    std::uint64_t seed = 0;
};

struct GeneratedData {
    Dataset train;
    Dataset test;
};

// Death times T ~ Exponential(rate = baseline * e^theta(x)); censoring times
// uniform on (0, max observed death time of the joint sample); duration =
// min(T, T_c), event = [T <= T_c]. Train and test are generated jointly from
// one stream and then split.
GeneratedData generate(const GeneratorSpec& spec);

// Recomputes the true log-partial hazard of each row from the provenance
// formula (covariates must be unstandardized).
std::vector<double> true_theta(const Dataset& ds);

struct CsvSchema {
    std::string duration_column = "duration";
    std::string event_column = "event";
    std::vector<std::string> categorical_columns;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema = {});

// z-scores continuous columns in place, recording the stats; categorical
// columns are untouched. Zero-variance columns are left unscaled.
struct StandardizeStats {
    std::vector<std::optional<double>> mean;  // per column, nullopt = untouched
    std::vector<std::optional<double>> stddev;
    std::vector<int> zero_variance_columns;
};
StandardizeStats standardize(Dataset& ds);
void apply_standardization(Dataset& ds, const StandardizeStats& stats);
void invert_standardization(Dataset& ds, const StandardizeStats& stats);

struct SplitResult {
    Dataset train;
    Dataset test;
    int merged_buckets = 0;
};

// Buckets rows by (event indicator x duration-quantile bin) and samples each
// bucket proportionally.
SplitResult stratified_split(const Dataset& ds, double test_fraction, int bins,
                             std::uint64_t seed);

// Row indices per fold, event-stratified, deterministic in (seed, row index).
std::vector<std::vector<int>> stratified_folds(const Dataset& ds, int folds,
                                               std::uint64_t seed);

Dataset take_rows(const Dataset& ds, std::span<const int> rows);

// CSV (header; covariates, duration, event) plus a JSON metadata sidecar
// carrying column kinds, stats, and provenance.
void save_dataset(const Dataset& ds, const std::string& csv_path);
void save_meta(const GeneratedData& gd, const std::string& meta_path);

}  // namespace survkan
