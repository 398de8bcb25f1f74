#ifndef QDIFF_PIPELINE_HPP
#define QDIFF_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qdiff/collapse.hpp"
#include "qdiff/density.hpp"
#include "qdiff/ingest.hpp"
#include "qdiff/pme.hpp"
#include "qdiff/regimes.hpp"

namespace qdiff {

/// Settings of a full analysis run. Defaults follow the reference analysis
/// of one-minute index data.
struct RunConfig {
    /// Index series CSV, or an ensemble manifest (.json) written by `qdiff synth`.
    std::filesystem::path input;
    std::filesystem::path output_dir = "run";

    double lag_min = 1.0;
    double lag_max = 3000.0;
    int points_per_decade = 4;

    Bandwidth bandwidth = Bandwidth::absolute(0.005);
    GridSpec grid;

    bool detrend = true;
    double detrend_window = kOneMonthMinutes;
    OriginPolicy policy = OriginPolicy::Overlapping;
    CsvFormat csv;

    double t0 = 1.0;
    double t_cross_start = 35.0;
    /// Used when the bump end cannot be detected from the data.
    double t_bump_end = 78.0;
    double strong_fit_min = 1.0;
    double strong_fit_max = 35.0;
    double weak_fit_min = 78.0;
    double weak_fit_max = 3000.0;

    BoundaryOptions boundary;
    FitOptions fit;

    /// D2 is tabulated on |x| <= d2_extent * (D t)^(1/alpha).
    double d2_extent = 10.0;
    std::size_t d2_points = 201;

    std::uint64_t seed = 42;

    /// Throws ValidationError naming the offending field.
    void validate() const;
    nlohmann::json to_json() const;
};

/// One per-lag q-Gaussian fit with the regime it belongs to and the window
/// it used.
struct ZonedFit {
    LagFit fit;
    Zone zone = Zone::C;
    FitWindow window;
};

struct RegimeCollapse {
    Zone zone = Zone::C;
    BetaLaw beta_law;
    CollapseResult result;
    CollapsedCloud cloud;
};

struct GoverningEntry {
    Zone zone = Zone::C;
    std::optional<GoverningParams> params;
    /// Why params are missing (e.g. q too close to 2).
    std::string note;
};

struct HeightRow {
    double lag = 0.0;
    double x_peak = 0.0;
    double height = 0.0;
};

/// Everything a run computes, in stage order.
struct PipelineResult {
    std::vector<ReturnEnsemble> ensembles;
    std::vector<EmpiricalPdf> pdfs;
    std::vector<HeightRow> heights;
    std::optional<HeightLaw> strong_height_law;
    std::optional<HeightLaw> weak_height_law;
    MomentSeries moments;
    std::optional<MomentLaw> moment_law;
    std::vector<BoundaryPoint> boundaries;
    std::optional<BoundaryCurve> boundary_curve;
    std::optional<double> detected_bump_end;
    std::optional<RegimePartition> partition;
    std::vector<ZonedFit> fits;
    std::vector<RegimeCollapse> collapses;
    std::vector<GoverningEntry> governing;
    nlohmann::json manifest;
};

/// Loads the configured input and builds one return ensemble per lag.
std::vector<ReturnEnsemble> load_ensembles(const RunConfig& config);

/// Stages, each a pure function of its predecessors' outputs.
std::vector<EmpiricalPdf> stage_pdfs(const std::vector<ReturnEnsemble>& ensembles, const RunConfig& config);
void stage_heights(PipelineResult& r, const RunConfig& config);
void stage_regimes(PipelineResult& r, const RunConfig& config);
void stage_fits(PipelineResult& r, const RunConfig& config);
std::vector<RegimeCollapse> stage_collapse(const std::vector<EmpiricalPdf>& pdfs,
                                           const std::vector<ZonedFit>& fits, const FitOptions& opts);
std::vector<GoverningEntry> stage_governing(const std::vector<RegimeCollapse>& collapses);

/// Runs every stage on in-memory ensembles and writes the artifacts. On a
/// stage failure the artifacts so far are kept, a FAILED marker naming the
/// stage is written and the error is rethrown.
PipelineResult run_pipeline(const RunConfig& config, std::vector<ReturnEnsemble> ensembles,
                            const nlohmann::json& input_record);

/// Validates the config, loads the input and runs every stage.
PipelineResult run_pipeline(const RunConfig& config);

// Artifact formats.

/// Shortest text that reads back as the same double, padded to 17 significant digits.
std::string format_number(double v);

void write_pdf(const EmpiricalPdf& p, const std::filesystem::path& csv_path);
/// Reads a pdf CSV and its .json sidecar.
EmpiricalPdf read_pdf(const std::filesystem::path& csv_path);
std::vector<EmpiricalPdf> read_pdf_dir(const std::filesystem::path& dir);

nlohmann::json to_json(const ZonedFit& f);
ZonedFit zoned_fit_from_json(const nlohmann::json& j);
FitOptions fit_options_from_json(const nlohmann::json& j);
/// Reads lag_fits.json; also returns the fit options the run used.
std::vector<ZonedFit> read_lag_fits(const std::filesystem::path& path, FitOptions* opts = nullptr);
nlohmann::json collapse_json(const std::vector<RegimeCollapse>& collapses);
nlohmann::json governing_json(const std::vector<GoverningEntry>& entries);
std::vector<GoverningEntry> governing_from_json(const nlohmann::json& j);

/// D2(x, t) table for every regime with governing parameters.
std::string d2_grid_csv(const std::vector<GoverningEntry>& entries, std::span<const double> lags,
                        double extent, std::size_t points);

/// Writes text to a file, throwing on I/O failure.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
std::string sha256_file(const std::filesystem::path& path);

/// Writes per-lag sample files plus an ensemble manifest for `run_pipeline`.
/// Returns the manifest path.
std::filesystem::path write_ensembles(const std::vector<ReturnEnsemble>& ensembles,
                                      const std::filesystem::path& dir,
                                      const nlohmann::json& generator);

}  // namespace qdiff

#endif
