#ifndef QDIFF_INGEST_HPP
#define QDIFF_INGEST_HPP

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace qdiff {

/// A hole in the sampling: the sample at `index` follows its predecessor by
/// more than one sampling interval.
struct Gap {
    std::size_t index = 0;
    double from = 0.0;
    double to = 0.0;
    long long missing_intervals = 0;
};

/// Index level I(t) on strictly increasing timestamps (minutes).
class IndexSeries {
public:
    IndexSeries() = default;
    /// Validates ordering and finiteness; infers the sampling interval as the
    /// smallest timestamp step and records every larger step as a gap.
    IndexSeries(std::vector<double> timestamps, std::vector<double> values);

    const std::vector<double>& timestamps() const { return timestamps_; }
    const std::vector<double>& values() const { return values_; }
    double interval() const { return interval_; }
    const std::vector<Gap>& gaps() const { return gaps_; }
    std::size_t size() const { return values_.size(); }
    /// Last timestamp minus first.
    double span() const;

private:
    std::vector<double> timestamps_;
    std::vector<double> values_;
    double interval_ = 1.0;
    std::vector<Gap> gaps_;
};

enum class HeaderMode { Auto, Present, Absent };
enum class TimestampKind { Auto, Minutes, Iso8601 };

/// Two-column CSV layout of an index file.
struct CsvFormat {
    char delimiter = ',';
    HeaderMode header = HeaderMode::Auto;
    std::size_t time_column = 0;
    std::size_t value_column = 1;
    TimestampKind timestamps = TimestampKind::Auto;
};

enum class OriginPolicy { Overlapping, NonOverlapping };

/// Price returns X = I(t0 + lag) - I(t0) at one lag.
struct ReturnEnsemble {
    double lag = 1.0;
    std::vector<double> returns;
    /// Start time t0 of each return; empty for ensembles not built from a series.
    std::vector<double> origins;
    OriginPolicy policy = OriginPolicy::Overlapping;
};

/// Minutes since 1970-01-01T00:00 for "YYYY-MM-DD[T ]HH:MM[:SS][Z]".
double parse_iso8601_minutes(const std::string& text);

IndexSeries load_series(const std::filesystem::path& path, const CsvFormat& format = {});

/// Re-indexes timestamps so consecutive samples are one interval apart,
/// i.e. converts wall-clock time to active market time.
IndexSeries to_active_time(const IndexSeries& s);

ReturnEnsemble returns_at_lag(const IndexSeries& s, double lag,
                              OriginPolicy policy = OriginPolicy::Overlapping);

/// Subtracts from every value the mean over its block of length `window`
/// (blocks aligned at the first timestamp).
IndexSeries detrend(const IndexSeries& s, double window);

/// Subtracts from every return the mean of the returns whose origin falls in
/// the same block of length `window`. Removes a constant drift exactly.
ReturnEnsemble detrend_returns(const ReturnEnsemble& e, double window);

/// Log-spaced integer lags between the bounds, both endpoints included.
std::vector<double> lag_ladder(double min_lag, double max_lag, int points_per_decade);

/// 30 trading days of 6.5 h, in active-market minutes.
inline constexpr double kOneMonthMinutes = 30.0 * 390.0;

nlohmann::json gap_report(const IndexSeries& s);

}  // namespace qdiff

#endif
