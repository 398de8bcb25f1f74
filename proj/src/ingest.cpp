#include "qdiff/ingest.hpp"

#include "qdiff/error.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <string_view>

namespace qdiff {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' ||
                          s.front() == '"')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' ||
                          s.back() == '"')) {
        s.remove_suffix(1);
    }
    return s;
}

bool parse_number(std::string_view s, double& out) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_int(std::string_view s, int& out) {
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

bool try_iso8601(std::string_view s, double& minutes) {
    s = trim(s);
    if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
    // YYYY-MM-DD
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') return false;
    int y = 0, mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
    if (!parse_int(s.substr(0, 4), y) || !parse_int(s.substr(5, 2), mo) ||
        !parse_int(s.substr(8, 2), d)) {
        return false;
    }
    if (s.size() > 10) {
        if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || s[13] != ':') return false;
        if (!parse_int(s.substr(11, 2), hh) || !parse_int(s.substr(14, 2), mm)) return false;
        if (s.size() > 16) {
            if (s[16] != ':' || s.size() < 19 || !parse_int(s.substr(17, 2), ss)) return false;
            if (s.size() > 19 && s[19] != '.') return false;
        }
    }
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) return false;
    const auto days = sys_days{ymd}.time_since_epoch().count();
    minutes = static_cast<double>(days) * 1440.0 + hh * 60.0 + mm;
    return true;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

}  // namespace

IndexSeries::IndexSeries(std::vector<double> timestamps, std::vector<double> values)
    : timestamps_(std::move(timestamps)), values_(std::move(values)) {
    if (timestamps_.size() != values_.size()) {
        throw ValidationError("IndexSeries: timestamp and value counts differ");
    }
    if (values_.empty()) throw ValidationError("IndexSeries: empty series");
    double step = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i]) || !std::isfinite(timestamps_[i])) {
            throw ValidationError("IndexSeries: non-finite entry at row " + std::to_string(i));
        }
        if (i > 0) {
            const double dt = timestamps_[i] - timestamps_[i - 1];
            if (!(dt > 0.0)) {
                throw ValidationError("IndexSeries: timestamps not strictly increasing at row " +
                                      std::to_string(i));
            }
            step = (step == 0.0) ? dt : std::min(step, dt);
        }
    }
    interval_ = step > 0.0 ? step : 1.0;
    for (std::size_t i = 1; i < timestamps_.size(); ++i) {
        const double dt = timestamps_[i] - timestamps_[i - 1];
        if (dt > interval_ * (1.0 + 1e-9)) {
            gaps_.push_back({i, timestamps_[i - 1], timestamps_[i],
                             std::llround(dt / interval_) - 1});
        }
    }
}

double IndexSeries::span() const { return timestamps_.back() - timestamps_.front(); }

double parse_iso8601_minutes(const std::string& text) {
    double m = 0.0;
    if (!try_iso8601(text, m)) throw ValidationError("not an ISO-8601 timestamp: '" + text + "'");
    return m;
}

IndexSeries load_series(const std::filesystem::path& path, const CsvFormat& format) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());

    std::vector<double> ts;
    std::vector<double> vs;
    std::string line;
    std::size_t line_no = 0;
    bool first_data = true;
    TimestampKind kind = format.timestamps;
    const std::size_t needed = std::max(format.time_column, format.value_column) + 1;
    auto fail = [&](const std::string& what) {
        throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + what);
    };

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split(line, format.delimiter);
        if (fields.size() < needed) fail("expected at least " + std::to_string(needed) + " fields");
        const auto tf = fields[format.time_column];
        const auto vf = fields[format.value_column];

        double t = 0.0;
        double v = 0.0;
        bool t_ok = false;
        if (kind == TimestampKind::Minutes || kind == TimestampKind::Auto) {
            t_ok = parse_number(tf, t);
            if (t_ok && kind == TimestampKind::Auto) kind = TimestampKind::Minutes;
        }
        if (!t_ok && (kind == TimestampKind::Iso8601 || kind == TimestampKind::Auto)) {
            t_ok = try_iso8601(tf, t);
            if (t_ok && kind == TimestampKind::Auto) kind = TimestampKind::Iso8601;
        }
        const bool v_ok = parse_number(vf, v);

        if (first_data) {
            first_data = false;
            const bool header = format.header == HeaderMode::Present ||
                                (format.header == HeaderMode::Auto && !t_ok && !v_ok);
            if (header) {
                if (format.timestamps == TimestampKind::Auto) kind = TimestampKind::Auto;
                continue;
            }
        }
        if (!t_ok) fail("unparseable timestamp '" + std::string(trim(tf)) + "'");
        if (!v_ok) fail("unparseable value '" + std::string(trim(vf)) + "'");
        if (!ts.empty() && !(t > ts.back())) {
            fail(t == ts.back() ? "duplicated timestamp" : "timestamp goes backwards");
        }
        ts.push_back(t);
        vs.push_back(v);
    }
    if (ts.empty()) throw ValidationError(path.string() + ": no data rows");
    return IndexSeries(std::move(ts), std::move(vs));
}

IndexSeries to_active_time(const IndexSeries& s) {
    std::vector<double> ts(s.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        ts[i] = s.timestamps().front() + static_cast<double>(i) * s.interval();
    }
    return IndexSeries(std::move(ts), s.values());
}

ReturnEnsemble returns_at_lag(const IndexSeries& s, double lag, OriginPolicy policy) {
    const double steps_real = lag / s.interval();
    const auto steps = static_cast<std::size_t>(std::llround(steps_real));
    if (!(lag > 0.0) || steps == 0 || std::abs(steps_real - static_cast<double>(steps)) > 1e-9) {
        throw ValidationError("lag " + std::to_string(lag) +
                              " must be a positive multiple of the sampling interval");
    }
    if (lag > s.span()) {
        throw ValidationError("lag " + std::to_string(lag) + " exceeds the series span");
    }
    ReturnEnsemble e;
    e.lag = lag;
    e.policy = policy;
    const auto& t = s.timestamps();
    const auto& v = s.values();
    const std::size_t stride = policy == OriginPolicy::Overlapping ? 1 : steps;
    const double tol = 1e-9 * lag;
    for (std::size_t i = 0; i + steps < s.size(); i += stride) {
        if (std::abs(t[i + steps] - t[i] - lag) > tol) continue;  // straddles a gap
        e.returns.push_back(v[i + steps] - v[i]);
        e.origins.push_back(t[i]);
    }
    if (e.returns.empty()) {
        throw ValidationError("no gap-free pairs at lag " + std::to_string(lag));
    }
    return e;
}

IndexSeries detrend(const IndexSeries& s, double window) {
    if (!(window >= 2.0 * s.interval())) {
        throw ValidationError("detrend window must span at least two samples");
    }
    if (window > s.span() + s.interval() * (1.0 + 1e-12)) {
        throw ValidationError("detrend window longer than the series");
    }
    const auto& t = s.timestamps();
    const double t0 = t.front();
    auto block_of = [&](double ti) { return static_cast<long long>(std::floor((ti - t0) / window)); };

    std::vector<double> out(s.values());
    std::size_t begin = 0;
    while (begin < out.size()) {
        const auto b = block_of(t[begin]);
        std::size_t end = begin;
        long double sum = 0.0L;
        while (end < out.size() && block_of(t[end]) == b) sum += out[end++];
        const auto mean = static_cast<double>(sum / static_cast<long double>(end - begin));
        for (std::size_t i = begin; i < end; ++i) out[i] -= mean;
        begin = end;
    }
    return IndexSeries(t, std::move(out));
}

ReturnEnsemble detrend_returns(const ReturnEnsemble& e, double window) {
    if (e.origins.size() != e.returns.size()) {
        throw ValidationError("detrend_returns: ensemble carries no origins");
    }
    if (!(window > 0.0)) throw ValidationError("detrend_returns: window must be positive");
    const double t0 = *std::min_element(e.origins.begin(), e.origins.end());
    std::map<long long, std::pair<long double, std::size_t>> blocks;
    std::vector<long long> ids(e.returns.size());
    for (std::size_t i = 0; i < e.returns.size(); ++i) {
        ids[i] = static_cast<long long>(std::floor((e.origins[i] - t0) / window));
        auto& [sum, count] = blocks[ids[i]];
        sum += e.returns[i];
        ++count;
    }
    ReturnEnsemble out = e;
    for (std::size_t i = 0; i < out.returns.size(); ++i) {
        const auto& [sum, count] = blocks[ids[i]];
        out.returns[i] -= static_cast<double>(sum / static_cast<long double>(count));
    }
    return out;
}

std::vector<double> lag_ladder(double min_lag, double max_lag, int points_per_decade) {
    if (!(min_lag > 0.0) || !(max_lag > min_lag)) {
        throw ValidationError("lag_ladder: require 0 < min_lag < max_lag");
    }
    if (points_per_decade < 1) throw ValidationError("lag_ladder: points_per_decade must be >= 1");
    std::set<double> lags;
    const double decades = std::log10(max_lag / min_lag);
    const int n = static_cast<int>(std::floor(decades * points_per_decade + 1e-9));
    for (int k = 0; k <= n; ++k) {
        const double v = std::round(min_lag * std::pow(10.0, static_cast<double>(k) / points_per_decade));
        if (v >= std::round(min_lag) && v <= max_lag) lags.insert(std::max(v, 1.0));
    }
    lags.insert(std::round(min_lag) > 0 ? std::round(min_lag) : 1.0);
    lags.insert(std::round(max_lag));
    return {lags.begin(), lags.end()};
}

nlohmann::json gap_report(const IndexSeries& s) {
    nlohmann::json gaps = nlohmann::json::array();
    long long missing = 0;
    for (const auto& g : s.gaps()) {
        gaps.push_back({{"index", g.index}, {"from", g.from}, {"to", g.to},
                        {"missing_intervals", g.missing_intervals}});
        missing += g.missing_intervals;
    }
    return {{"n_samples", s.size()},
            {"interval", s.interval()},
            {"span", s.span()},
            {"n_gaps", s.gaps().size()},
            {"missing_intervals", missing},
            {"gaps", gaps}};
}

}  // namespace qdiff
