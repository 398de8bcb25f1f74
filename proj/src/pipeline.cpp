#include "qdiff/pipeline.hpp"

#include "qdiff/error.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace qdiff {

namespace {

std::string bandwidth_kind(const Bandwidth& b) {
    return b.kind == Bandwidth::Kind::Absolute ? "absolute" : "relative";
}

std::string lag_name(double lag) { return "lag_" + format_number(lag); }

double parse_number(std::string_view s, const std::string& where) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ValidationError(where + ": cannot parse number '" + std::string(s) + "'");
    }
    return v;
}

std::vector<double> read_column(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::vector<double> out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty() || line == "\r") continue;
        if (no == 1 && !(std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-' || line[0] == '+' || line[0] == '.')) {
            continue;
        }
        out.push_back(parse_number(line, path.string() + ":" + std::to_string(no)));
    }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

const EmpiricalPdf& pdf_at(const std::vector<EmpiricalPdf>& pdfs, double lag) {
    for (const auto& p : pdfs) {
        if (p.lag == lag) return p;
    }
    throw ValidationError("no pdf for lag " + format_number(lag));
}

nlohmann::json window_json(const FitWindow& w) {
    switch (w.kind) {
        case FitWindow::Kind::Full: return {{"kind", "full"}};
        case FitWindow::Kind::Inside: return {{"kind", "inside"}, {"half_width", w.half_width}};
        case FitWindow::Kind::Outside: return {{"kind", "outside"}, {"half_width", w.half_width}};
    }
    return {};
}

FitWindow window_from_json(const nlohmann::json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "full") return FitWindow::full();
    if (kind == "inside") return FitWindow::inside(j.at("half_width").get<double>());
    if (kind == "outside") return FitWindow::outside(j.at("half_width").get<double>());
    throw ValidationError("unknown fit window kind '" + kind + "'");
}

Zone zone_from_string(const std::string& s) {
    if (s == "A") return Zone::A;
    if (s == "B") return Zone::B;
    if (s == "C") return Zone::C;
    throw ValidationError("unknown zone '" + s + "'");
}

nlohmann::json fit_options_json(const FitOptions& o) {
    return {{"floor_ratio", o.floor_ratio}, {"max_noise", o.max_noise}, {"max_iterations", o.max_iterations},
            {"q_starts", o.q_starts}, {"min_points", o.min_points}};
}

nlohmann::json optional_law(const std::optional<HeightLaw>& h, double lo, double hi) {
    if (!h) return nullptr;
    return {{"alpha", h->alpha}, {"alpha_err", h->alpha_err}, {"exponent", h->fit.exponent},
            {"prefactor", h->fit.prefactor}, {"t_min", lo}, {"t_max", hi},
            {"residual", h->fit.residual}, {"n_points", h->fit.n_points}};
}

class RunWriter {
public:
    RunWriter(fs::path dir, nlohmann::json manifest) : dir_(std::move(dir)), manifest_(std::move(manifest)) {
        fs::create_directories(dir_);
        fs::remove(dir_ / "FAILED");
        manifest_["artifacts"] = nlohmann::json::array();
    }

    void text(const std::string& stage, const std::string& rel, const std::string& content) {
        const fs::path p = dir_ / rel;
        fs::create_directories(p.parent_path());
        write_text(p, content);
        manifest_["artifacts"].push_back({{"stage", stage}, {"path", rel}, {"sha256", sha256_file(p)}});
    }
    void json(const std::string& stage, const std::string& rel, const nlohmann::json& j) {
        text(stage, rel, j.dump(2) + "\n");
    }
    void pdf(const std::string& stage, const std::string& rel, const EmpiricalPdf& p) {
        const fs::path csv = dir_ / rel;
        fs::create_directories(csv.parent_path());
        write_pdf(p, csv);
        fs::path side = rel;
        side.replace_extension(".json");
        manifest_["artifacts"].push_back({{"stage", stage}, {"path", rel}, {"sha256", sha256_file(csv)}});
        manifest_["artifacts"].push_back(
            {{"stage", stage}, {"path", side.generic_string()}, {"sha256", sha256_file(dir_ / side)}});
    }

    nlohmann::json finish(const std::string& status) {
        manifest_["status"] = status;
        write_text(dir_ / "manifest.json", manifest_.dump(2) + "\n");
        return manifest_;
    }
    void fail(const std::string& stage, const std::string& what) {
        manifest_["failed_stage"] = stage;
        manifest_["error"] = what;
        finish("failed");
        write_text(dir_ / "FAILED", "stage: " + stage + "\nerror: " + what + "\n");
    }

private:
    fs::path dir_;
    nlohmann::json manifest_;
};

}  // namespace

std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
    if (!out) throw ValidationError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

void RunConfig::validate() const {
    if (input.empty()) throw ValidationError("config: input is required");
    if (!fs::exists(input)) throw ValidationError("config: input not found: " + input.string());
    if (output_dir.empty()) throw ValidationError("config: output directory is required");
    if (!(lag_min > 0.0) || !(lag_max > lag_min)) throw ValidationError("config: need 0 < lag_min < lag_max");
    if (points_per_decade < 1) throw ValidationError("config: points_per_decade must be at least 1");
    if (!(bandwidth.value > 0.0)) throw ValidationError("config: bandwidth must be positive");
    if (grid.points < 16) throw ValidationError("config: grid needs at least 16 points");
    if (!(grid.tail_multiple > 0.0)) throw ValidationError("config: tail_multiple must be positive");
    if (detrend && !(detrend_window > 0.0)) throw ValidationError("config: detrend window must be positive");
    if (!(t0 > 0.0)) throw ValidationError("config: t0 must be positive");
    if (!(t_cross_start < t_bump_end)) throw ValidationError("config: t_cross_start must precede t_bump_end");
    if (!(strong_fit_min < strong_fit_max)) throw ValidationError("config: empty strong fit range");
    if (!(weak_fit_min < weak_fit_max)) throw ValidationError("config: empty weak fit range");
    if (!(d2_extent > 0.0) || d2_points < 2) throw ValidationError("config: invalid D2 grid");
}

nlohmann::json RunConfig::to_json() const {
    return {{"input", input.generic_string()},
            {"lag_min", lag_min},
            {"lag_max", lag_max},
            {"points_per_decade", points_per_decade},
            {"bandwidth", bandwidth.value},
            {"bandwidth_kind", bandwidth_kind(bandwidth)},
            {"grid_points", grid.points},
            {"grid_half_width", grid.half_width ? nlohmann::json(*grid.half_width) : nlohmann::json(nullptr)},
            {"tail_multiple", grid.tail_multiple},
            {"detrend", detrend},
            {"detrend_window", detrend_window},
            {"origins", policy == OriginPolicy::Overlapping ? "overlapping" : "non-overlapping"},
            {"t0", t0},
            {"t_cross_start", t_cross_start},
            {"t_bump_end", t_bump_end},
            {"strong_fit", {strong_fit_min, strong_fit_max}},
            {"weak_fit", {weak_fit_min, weak_fit_max}},
            {"boundary_threshold", boundary.threshold},
            {"boundary_smoothing", boundary.smoothing},
            {"boundary_significance", boundary.significance},
            {"fit", fit_options_json(fit)},
            {"d2_extent", d2_extent},
            {"d2_points", d2_points},
            {"seed", seed}};
}

void write_pdf(const EmpiricalPdf& p, const fs::path& csv_path) {
    std::string out = "x,density\n";
    out.reserve(p.size() * 48);
    for (std::size_t i = 0; i < p.size(); ++i) {
        out += format_number(p.grid[i]);
        out += ',';
        out += format_number(p.density[i]);
        out += '\n';
    }
    write_text(csv_path, out);
    nlohmann::json side = {{"lag", p.lag},          {"n_samples", p.n_samples}, {"bandwidth", p.bandwidth},
                           {"coverage", p.coverage}, {"points", p.size()}};
    fs::path sp = csv_path;
    sp.replace_extension(".json");
    write_text(sp, side.dump(2) + "\n");
}

EmpiricalPdf read_pdf(const fs::path& csv_path) {
    fs::path sp = csv_path;
    sp.replace_extension(".json");
    const auto side = nlohmann::json::parse(read_text(sp));
    EmpiricalPdf p;
    p.lag = side.at("lag").get<double>();
    p.n_samples = side.value("n_samples", std::size_t{0});
    p.bandwidth = side.value("bandwidth", 0.0);
    p.coverage = side.value("coverage", 1.0);
    std::ifstream in(csv_path);
    if (!in) throw ValidationError("cannot open " + csv_path.string());
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (no == 1 || line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) {
            throw ValidationError(csv_path.string() + ":" + std::to_string(no) + ": expected x,density");
        }
        const std::string where = csv_path.string() + ":" + std::to_string(no);
        p.grid.push_back(parse_number(std::string_view(line).substr(0, comma), where));
        p.density.push_back(parse_number(std::string_view(line).substr(comma + 1), where));
    }
    if (p.grid.size() < 3) throw ValidationError(csv_path.string() + ": too few rows");
    return p;
}

std::vector<EmpiricalPdf> read_pdf_dir(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
    std::vector<EmpiricalPdf> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".csv") out.push_back(read_pdf(entry.path()));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.lag < b.lag; });
    if (out.empty()) throw ValidationError("no pdf files in " + dir.string());
    return out;
}

fs::path write_ensembles(const std::vector<ReturnEnsemble>& ensembles, const fs::path& dir,
                         const nlohmann::json& generator) {
    fs::create_directories(dir);
    nlohmann::json files = nlohmann::json::array();
    for (const auto& e : ensembles) {
        const std::string name = "samples_" + lag_name(e.lag) + ".csv";
        std::string out = "x\n";
        out.reserve(e.returns.size() * 24);
        for (double v : e.returns) {
            out += format_number(v);
            out += '\n';
        }
        write_text(dir / name, out);
        files.push_back({{"lag", e.lag}, {"path", name}, {"n", e.returns.size()}, {"sha256", sha256_file(dir / name)}});
    }
    const nlohmann::json manifest = {{"kind", "ensembles"}, {"generator", generator}, {"files", files}};
    const fs::path path = dir / "ensembles.json";
    write_text(path, manifest.dump(2) + "\n");
    return path;
}

std::vector<ReturnEnsemble> load_ensembles(const RunConfig& config) {
    std::vector<ReturnEnsemble> out;
    if (config.input.extension() == ".json") {
        const auto j = nlohmann::json::parse(read_text(config.input));
        if (j.value("kind", "") != "ensembles") throw ValidationError("input JSON is not an ensemble manifest");
        for (const auto& f : j.at("files")) {
            const double lag = f.at("lag").get<double>();
            if (lag < config.lag_min || lag > config.lag_max) continue;
            ReturnEnsemble e;
            e.lag = lag;
            e.returns = read_column(config.input.parent_path() / f.at("path").get<std::string>());
            if (e.returns.empty()) throw ValidationError("empty ensemble for lag " + format_number(lag));
            out.push_back(std::move(e));
        }
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.lag < b.lag; });
    } else {
        const IndexSeries s = load_series(config.input, config.csv);
        for (double lag : lag_ladder(config.lag_min, config.lag_max, config.points_per_decade)) {
            if (lag > s.span()) break;
            ReturnEnsemble e = returns_at_lag(s, lag, config.policy);
            if (config.detrend) e = detrend_returns(e, config.detrend_window);
            out.push_back(std::move(e));
        }
    }
    if (out.empty()) throw ValidationError("no return ensembles in the configured lag range");
    return out;
}

std::vector<EmpiricalPdf> stage_pdfs(const std::vector<ReturnEnsemble>& ensembles, const RunConfig& config) {
    std::vector<EmpiricalPdf> out;
    out.reserve(ensembles.size());
    for (const auto& e : ensembles) out.push_back(kde(e, config.bandwidth, config.grid));
    return out;
}

void stage_heights(PipelineResult& r, const RunConfig& config) {
    r.heights.clear();
    std::vector<double> lags;
    std::vector<double> heights;
    for (const auto& p : r.pdfs) {
        const auto h = pdf_height(p);
        r.heights.push_back({p.lag, h.x_peak, h.height});
        lags.push_back(p.lag);
        heights.push_back(h.height);
    }
    auto try_law = [&](double lo, double hi) -> std::optional<HeightLaw> {
        const auto n = std::count_if(lags.begin(), lags.end(), [&](double t) { return t >= lo && t <= hi; });
        if (n < 3) return std::nullopt;
        return fit_height_law(lags, heights, lo, hi);
    };
    r.strong_height_law = try_law(config.strong_fit_min, config.strong_fit_max);
    r.weak_height_law = try_law(config.weak_fit_min, config.weak_fit_max);
    r.moments = moment_series(r.pdfs);
    r.moment_law.reset();
    if (r.moments.lags.size() >= 3) r.moment_law = fit_moment_law(r.moments);
}

void stage_regimes(PipelineResult& r, const RunConfig& config) {
    std::vector<double> lags;
    std::vector<bool> detected;
    r.boundaries.clear();
    for (const auto& p : r.pdfs) {
        const auto b = bump_boundary(p, config.boundary);
        lags.push_back(p.lag);
        detected.push_back(b.has_value());
        if (b) r.boundaries.push_back({p.lag, b->first, b->second});
    }
    r.detected_bump_end = detect_bump_end(lags, detected);
    const double t_end = r.detected_bump_end.value_or(config.t_bump_end);
    std::vector<BoundaryPoint> inside;
    for (const auto& b : r.boundaries) {
        if (b.t < t_end) inside.push_back(b);
    }
    r.boundary_curve.reset();
    r.partition.reset();
    std::set<double> distinct;
    for (const auto& b : inside) distinct.insert(b.t);
    if (distinct.size() < 3) return;
    r.boundary_curve = fit_boundary_curve(inside, config.t0);
    const auto& c = *r.boundary_curve;
    if (!(c.nu > 0.0 && c.nu < 1.0)) return;
    const double end = t_end > config.t_cross_start ? t_end : config.t_bump_end;
    r.partition = partition_zones(c, config.t_cross_start, end);
}

void stage_fits(PipelineResult& r, const RunConfig& config) {
    r.fits.clear();
    for (const auto& p : r.pdfs) {
        const double t = p.lag;
        ZonedFit z;
        if (!r.partition) {
            z.zone = Zone::C;
            z.window = FitWindow::full();
        } else {
            const auto& part = *r.partition;
            if (t < part.t_cross_start()) {
                z.zone = Zone::A;
                z.window = FitWindow::inside(part.boundary(t));
                if (t < config.strong_fit_min || t > config.strong_fit_max) z.zone = Zone::B;
            } else if (t >= part.t_bump_end() || t >= config.weak_fit_min) {
                z.zone = Zone::C;
                z.window = t >= part.t_bump_end() ? FitWindow::full() : FitWindow::outside(part.boundary(t));
                if (t < config.weak_fit_min || t > config.weak_fit_max) z.zone = Zone::B;
            } else {
                z.zone = Zone::B;
                z.window = FitWindow::full();
            }
        }
        if (z.zone == Zone::B) {
            // Crossover lags are reported but never pooled; a failed fit there is not fatal.
            try {
                z.fit = fit_qgauss(p, z.window, config.fit);
            } catch (const ComputationError&) {
                continue;
            }
        } else {
            z.fit = fit_qgauss(p, z.window, config.fit);
        }
        r.fits.push_back(z);
    }
}

std::vector<RegimeCollapse> stage_collapse(const std::vector<EmpiricalPdf>& pdfs,
                                           const std::vector<ZonedFit>& fits, const FitOptions& opts) {
    std::vector<RegimeCollapse> out;
    for (Zone zone : {Zone::A, Zone::C}) {
        std::vector<LagFit> lag_fits;
        std::vector<EmpiricalPdf> subset;
        std::map<double, FitWindow> windows;
        for (const auto& f : fits) {
            if (f.zone != zone) continue;
            lag_fits.push_back(f.fit);
            subset.push_back(pdf_at(pdfs, f.fit.lag));
            windows[f.fit.lag] = f.window;
        }
        if (lag_fits.size() < 3) continue;
        RegimeCollapse rc;
        rc.zone = zone;
        rc.beta_law = fit_beta_law(lag_fits);
        rc.cloud = collapse_pdfs(subset, rc.beta_law.scaling,
                                 [&windows](double lag) { return windows.at(lag); }, opts.floor_ratio,
                                 opts.max_noise);
        rc.result = fit_collapsed(rc.cloud, true, zone, opts);
        out.push_back(std::move(rc));
    }
    return out;
}

std::vector<GoverningEntry> stage_governing(const std::vector<RegimeCollapse>& collapses) {
    std::vector<GoverningEntry> out;
    for (const auto& c : collapses) {
        GoverningEntry g;
        g.zone = c.zone;
        try {
            g.params = map_constants(c.result.q, c.result.scaling.alpha, c.result.scaling.d_coef);
        } catch (const DomainError& e) {
            g.note = e.what();
        }
        out.push_back(std::move(g));
    }
    return out;
}

nlohmann::json to_json(const ZonedFit& f) {
    auto j = to_json(f.fit);
    j["zone"] = to_string(f.zone);
    j["window"] = window_json(f.window);
    return j;
}

FitOptions fit_options_from_json(const nlohmann::json& j) {
    FitOptions o;
    o.floor_ratio = j.value("floor_ratio", o.floor_ratio);
    o.max_noise = j.value("max_noise", o.max_noise);
    o.max_iterations = j.value("max_iterations", o.max_iterations);
    o.q_starts = j.value("q_starts", o.q_starts);
    o.min_points = j.value("min_points", o.min_points);
    return o;
}

std::vector<ZonedFit> read_lag_fits(const fs::path& path, FitOptions* opts) {
    const auto j = nlohmann::json::parse(read_text(path));
    if (opts) *opts = fit_options_from_json(j.value("fit_options", nlohmann::json::object()));
    std::vector<ZonedFit> out;
    for (const auto& f : j.at("fits")) out.push_back(zoned_fit_from_json(f));
    return out;
}

ZonedFit zoned_fit_from_json(const nlohmann::json& j) {
    ZonedFit f;
    f.fit = lag_fit_from_json(j);
    f.zone = zone_from_string(j.at("zone").get<std::string>());
    f.window = window_from_json(j.at("window"));
    return f;
}

nlohmann::json collapse_json(const std::vector<RegimeCollapse>& collapses) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : collapses) {
        auto j = to_json(c.result);
        j["beta_law"] = to_json(c.beta_law);
        j["spread"] = collapse_spread(c.cloud);
        arr.push_back(j);
    }
    return {{"regimes", arr}};
}

nlohmann::json governing_json(const std::vector<GoverningEntry>& entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& g : entries) {
        nlohmann::json j = {{"zone", to_string(g.zone)}};
        if (g.params) {
            j["params"] = g.params->to_json();
            j["coefficient"] = governing_coefficient(*g.params);
        } else {
            j["params"] = nullptr;
            j["note"] = g.note;
        }
        arr.push_back(j);
    }
    return {{"regimes", arr}};
}

std::vector<GoverningEntry> governing_from_json(const nlohmann::json& j) {
    std::vector<GoverningEntry> out;
    for (const auto& e : j.at("regimes")) {
        GoverningEntry g;
        g.zone = zone_from_string(e.at("zone").get<std::string>());
        if (!e.at("params").is_null()) g.params = GoverningParams::from_json(e.at("params"));
        g.note = e.value("note", "");
        out.push_back(std::move(g));
    }
    return out;
}

std::string d2_grid_csv(const std::vector<GoverningEntry>& entries, std::span<const double> lags,
                        double extent, std::size_t points) {
    if (points < 2 || !(extent > 0.0)) throw ValidationError("d2 grid: need at least 2 points and a positive extent");
    std::string out = "zone,t,x,d2\n";
    for (const auto& g : entries) {
        if (!g.params) continue;
        const ScalingLaw s{g.params->alpha, g.params->d_coef};
        for (double t : lags) {
            const double w = extent * s.scale(t);
            for (std::size_t i = 0; i < points; ++i) {
                const double x = -w + 2.0 * w * static_cast<double>(i) / static_cast<double>(points - 1);
                out += to_string(g.zone) + "," + format_number(t) + "," + format_number(x) + "," +
                       format_number(black_scholes_d2(x, t, *g.params)) + "\n";
            }
        }
    }
    return out;
}

PipelineResult run_pipeline(const RunConfig& config, std::vector<ReturnEnsemble> ensembles,
                            const nlohmann::json& input_record) {
    PipelineResult r;
    r.ensembles = std::move(ensembles);
    RunWriter w(config.output_dir, {{"input", input_record}, {"config", config.to_json()}});
    std::string stage = "returns";
    try {
        std::string summary = "lag,n_returns,mean,core_scale\n";
        for (const auto& e : r.ensembles) {
            summary += format_number(e.lag) + "," + std::to_string(e.returns.size()) + "," +
                       format_number(mean_of(e.returns)) + "," + format_number(core_scale(e.returns)) + "\n";
        }
        w.text(stage, "returns.csv", summary);

        stage = "pdfs";
        r.pdfs = stage_pdfs(r.ensembles, config);
        for (const auto& p : r.pdfs) w.pdf(stage, "pdfs/" + lag_name(p.lag) + ".csv", p);

        stage = "heights";
        stage_heights(r, config);
        std::string hcsv = "lag,x_peak,height\n";
        for (const auto& h : r.heights) {
            hcsv += format_number(h.lag) + "," + format_number(h.x_peak) + "," + format_number(h.height) + "\n";
        }
        w.text(stage, "heights.csv", hcsv);
        std::string mcsv = "lag,second_moment,window\n";
        for (std::size_t i = 0; i < r.moments.lags.size(); ++i) {
            mcsv += format_number(r.moments.lags[i]) + "," + format_number(r.moments.second_moment[i]) + "," +
                    format_number(r.moments.window[i]) + "\n";
        }
        w.text(stage, "moments.csv", mcsv);
        nlohmann::json laws = {
            {"strong", optional_law(r.strong_height_law, config.strong_fit_min, config.strong_fit_max)},
            {"weak", optional_law(r.weak_height_law, config.weak_fit_min, config.weak_fit_max)},
            {"moment", r.moment_law ? nlohmann::json{{"alpha", r.moment_law->alpha},
                                                     {"exponent", r.moment_law->fit.exponent},
                                                     {"residual", r.moment_law->fit.residual}}
                                    : nlohmann::json(nullptr)}};
        w.json(stage, "height_laws.json", laws);

        stage = "regimes";
        stage_regimes(r, config);
        std::string bcsv = "t,x_minus,x_plus\n";
        for (const auto& b : r.boundaries) {
            bcsv += format_number(b.t) + "," + format_number(b.x_minus) + "," + format_number(b.x_plus) + "\n";
        }
        w.text(stage, "boundaries.csv", bcsv);
        nlohmann::json part = {{"partition", r.partition ? r.partition->to_json() : nlohmann::json(nullptr)},
                               {"detected_bump_end", r.detected_bump_end ? nlohmann::json(*r.detected_bump_end)
                                                                         : nlohmann::json(nullptr)}};
        if (r.boundary_curve) {
            part["curve"] = {{"a", r.boundary_curve->a}, {"nu", r.boundary_curve->nu},
                             {"a_err", r.boundary_curve->a_err}, {"nu_err", r.boundary_curve->nu_err},
                             {"t0", r.boundary_curve->t0}};
        }
        w.json(stage, "partition.json", part);

        stage = "fits";
        stage_fits(r, config);
        nlohmann::json fj = nlohmann::json::array();
        for (const auto& f : r.fits) fj.push_back(to_json(f));
        w.json(stage, "lag_fits.json", {{"fit_options", fit_options_json(config.fit)}, {"fits", fj}});

        stage = "collapse";
        r.collapses = stage_collapse(r.pdfs, r.fits, config.fit);
        w.json(stage, "collapse.json", collapse_json(r.collapses));
        for (const auto& c : r.collapses) {
            std::string ccsv = "x_rescaled,p_rescaled,lag\n";
            for (const auto& pt : c.cloud.points) {
                ccsv += format_number(pt.x) + "," + format_number(pt.p) + "," + format_number(pt.lag) + "\n";
            }
            w.text(stage, "collapse_" + to_string(c.zone) + ".csv", ccsv);
        }

        stage = "governing";
        r.governing = stage_governing(r.collapses);
        w.json(stage, "governing.json", governing_json(r.governing));

        stage = "d2";
        std::vector<double> lags;
        for (const auto& p : r.pdfs) lags.push_back(p.lag);
        w.text(stage, "d2_grid.csv", d2_grid_csv(r.governing, lags, config.d2_extent, config.d2_points));
    } catch (const std::exception& e) {
        w.fail(stage, e.what());
        throw;
    }
    r.manifest = w.finish("ok");
    return r;
}

PipelineResult run_pipeline(const RunConfig& config) {
    config.validate();
    nlohmann::json record = {{"path", config.input.generic_string()}, {"sha256", sha256_file(config.input)}};
    std::vector<ReturnEnsemble> ensembles;
    try {
        ensembles = load_ensembles(config);
    } catch (const std::exception& e) {
        RunWriter w(config.output_dir, {{"input", record}, {"config", config.to_json()}});
        w.fail("returns", e.what());
        throw;
    }
    return run_pipeline(config, std::move(ensembles), record);
}

}  // namespace qdiff
