#include "qdiff/error.hpp"
#include "qdiff/pipeline.hpp"
#include "qdiff/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace qdiff;

namespace {

FitWindow parse_window(const std::string& s) {
    if (s == "full") return FitWindow::full();
    const auto colon = s.find(':');
    if (colon != std::string::npos) {
        const std::string kind = s.substr(0, colon);
        double w = 0.0;
        try {
            w = std::stod(s.substr(colon + 1));
        } catch (const std::exception&) {
            throw ValidationError("bad window width in '" + s + "'");
        }
        if (kind == "inside") return FitWindow::inside(w);
        if (kind == "outside") return FitWindow::outside(w);
    }
    throw ValidationError("window must be full, inside:W or outside:W");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Expands `pipeline --config FILE` into the equivalent long options. Keys
// are long option names; options given on the command line take precedence.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    const auto sub = std::find(args.begin(), args.end(), "pipeline");
    if (sub == args.end()) return args;
    std::string file;
    std::vector<std::string> rest;
    for (auto it = sub + 1; it != args.end(); ++it) {
        if (*it == "--config" && it + 1 != args.end()) {
            file = *++it;
        } else if (it->rfind("--config=", 0) == 0) {
            file = it->substr(9);
        } else {
            rest.push_back(*it);
        }
    }
    if (file.empty()) return args;
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot open config file " + file);
    std::vector<std::string> injected;
    std::string line;
    int no = 0;
    while (std::getline(in, line)) {
        ++no;
        line = trim(line.substr(0, line.find_first_of("#;")));
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError(file + ":" + std::to_string(no) + ": expected key = value");
        }
        const std::string key = "--" + trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        const bool explicit_flag = std::any_of(rest.begin(), rest.end(), [&](const std::string& a) {
            return a == key || a.rfind(key + "=", 0) == 0;
        });
        if (explicit_flag) continue;
        if (value == "true") {
            injected.push_back(key);
        } else if (value != "false") {
            injected.push_back(key);
            injected.push_back(value);
        }
    }
    std::vector<std::string> out(args.begin(), sub + 1);
    out.insert(out.end(), injected.begin(), injected.end());
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << text;
    } else {
        write_text(out, text);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"q-Gaussian anomalous diffusion analysis"};
    app.require_subcommand(1);

    // pipeline
    RunConfig cfg;
    std::string input;
    std::string out_dir = "run";
    std::string bw_kind = "absolute";
    std::string origins = "overlapping";
    std::string timestamps = "auto";
    char delimiter = ',';
    bool no_detrend = false;
    std::optional<double> grid_half_width;
    auto* pipe = app.add_subcommand("pipeline", "run every analysis stage and write a run directory");
    std::string config_file;
    pipe->add_option("--config", config_file, "INI file with option defaults (keys are long option names)");
    pipe->add_option("--input", input, "index series CSV or ensemble manifest (.json)")->required();
    pipe->add_option("--out", out_dir, "output directory")->capture_default_str();
    pipe->add_option("--lag-min", cfg.lag_min, "smallest lag (minutes)")->capture_default_str();
    pipe->add_option("--lag-max", cfg.lag_max, "largest lag (minutes)")->capture_default_str();
    pipe->add_option("--points-per-decade", cfg.points_per_decade)->capture_default_str();
    pipe->add_option("--bandwidth", cfg.bandwidth.value, "KDE bandwidth (reference analysis: 0.005)")->capture_default_str();
    pipe->add_option("--bandwidth-kind", bw_kind, "absolute, or relative to the core scale")
        ->check(CLI::IsMember({"absolute", "relative"}))
        ->capture_default_str();
    pipe->add_option("--grid-points", cfg.grid.points)->capture_default_str();
    pipe->add_option("--grid-half-width", grid_half_width, "fixed KDE grid half width");
    pipe->add_option("--tail-multiple", cfg.grid.tail_multiple)->capture_default_str();
    pipe->add_flag("--no-detrend", no_detrend, "keep the drift");
    pipe->add_option("--detrend-window", cfg.detrend_window, "minutes (default: one month of trading)")->capture_default_str();
    pipe->add_option("--origins", origins)->check(CLI::IsMember({"overlapping", "non-overlapping"}))->capture_default_str();
    pipe->add_option("--delimiter", delimiter)->capture_default_str();
    pipe->add_option("--timestamps", timestamps)->check(CLI::IsMember({"auto", "minutes", "iso8601"}))->capture_default_str();
    pipe->add_option("--t0", cfg.t0)->capture_default_str();
    pipe->add_option("--t-cross-start", cfg.t_cross_start, "start of the crossover zone")->capture_default_str();
    pipe->add_option("--t-bump-end", cfg.t_bump_end, "bump end if not detected")->capture_default_str();
    pipe->add_option("--strong-fit-min", cfg.strong_fit_min)->capture_default_str();
    pipe->add_option("--strong-fit-max", cfg.strong_fit_max)->capture_default_str();
    pipe->add_option("--weak-fit-min", cfg.weak_fit_min)->capture_default_str();
    pipe->add_option("--weak-fit-max", cfg.weak_fit_max)->capture_default_str();
    pipe->add_option("--boundary-threshold", cfg.boundary.threshold)->capture_default_str();
    pipe->add_option("--boundary-significance", cfg.boundary.significance)->capture_default_str();
    pipe->add_option("--d2-extent", cfg.d2_extent)->capture_default_str();
    pipe->add_option("--d2-points", cfg.d2_points)->capture_default_str();
    pipe->add_option("--seed", cfg.seed)->capture_default_str();

    // synth
    double s_q = 1.71;
    double s_alpha = 1.79;
    double s_d = 0.1118;
    double s_lag_min = 1.0;
    double s_lag_max = 3000.0;
    int s_ppd = 4;
    std::size_t s_n = 1'000'000;
    std::uint64_t s_seed = 42;
    std::string s_out = "synth";
    bool two_regime = false;
    TwoRegimeSpec spec;
    auto* synth = app.add_subcommand("synth", "write sample files drawn from the self-similar family");
    synth->add_option("--q", s_q)->capture_default_str();
    synth->add_option("--alpha", s_alpha)->capture_default_str();
    synth->add_option("--d", s_d)->capture_default_str();
    synth->add_option("--lag-min", s_lag_min)->capture_default_str();
    synth->add_option("--lag-max", s_lag_max)->capture_default_str();
    synth->add_option("--points-per-decade", s_ppd)->capture_default_str();
    synth->add_option("--n", s_n, "samples per lag")->capture_default_str();
    synth->add_option("--seed", s_seed)->capture_default_str();
    synth->add_option("--out", s_out, "output directory")->capture_default_str();
    synth->add_flag("--two-regime", two_regime, "bump (strong family) plus weak family until --t-bump-end");
    synth->add_option("--strong-q", spec.strong_q)->capture_default_str();
    synth->add_option("--strong-alpha", spec.strong.alpha)->capture_default_str();
    synth->add_option("--strong-d", spec.strong.d_coef)->capture_default_str();
    synth->add_option("--bump-weight", spec.bump_weight)->capture_default_str();
    synth->add_option("--t-bump-end", spec.t_bump_end)->capture_default_str();

    // verify-pme
    double v_m = 0.29;
    double v_t1 = 1.0;
    double v_t2 = 4.0;
    std::size_t v_points = 401;
    double v_half = 0.0;
    double v_c = 1.0;
    std::string v_scheme = "crank-nicolson";
    std::string v_out;
    auto* verify = app.add_subcommand("verify-pme", "check the porous media solver against the Barenblatt solution");
    verify->add_option("--m", v_m, "exponent in (-1, 2), not 0")->capture_default_str();
    verify->add_option("--t1", v_t1)->capture_default_str();
    verify->add_option("--t2", v_t2)->capture_default_str();
    verify->add_option("--points", v_points, "coarsest grid; refined twice")->capture_default_str();
    verify->add_option("--half-width", v_half, "0 picks one from the profile")->capture_default_str();
    verify->add_option("--c", v_c, "integration constant")->capture_default_str();
    verify->add_option("--scheme", v_scheme)
        ->check(CLI::IsMember({"explicit", "backward-euler", "crank-nicolson"}))
        ->capture_default_str();
    verify->add_option("--out", v_out, "report file (default stdout)");

    // fit
    std::string f_pdf;
    std::string f_window = "full";
    std::string f_out;
    auto* fit = app.add_subcommand("fit", "fit a q-Gaussian to one pdf file");
    fit->add_option("--pdf", f_pdf, "pdf CSV with its .json sidecar")->required();
    fit->add_option("--window", f_window, "full, inside:W or outside:W")->capture_default_str();
    fit->add_option("--out", f_out);

    // collapse
    std::string c_run;
    std::string c_out;
    auto* collapse = app.add_subcommand("collapse", "recompute collapse.json from a run's pdfs and lag fits");
    collapse->add_option("--run", c_run, "run directory")->required();
    collapse->add_option("--out", c_out, "output file (default stdout)");

    // d2-grid
    std::string d_gov;
    std::vector<double> d_lags;
    double d_extent = 10.0;
    std::size_t d_points = 201;
    std::string d_out;
    auto* d2 = app.add_subcommand("d2-grid", "tabulate the diffusion coefficient D2(x, t)");
    d2->add_option("--governing", d_gov, "governing.json from a run")->required();
    d2->add_option("--lags", d_lags, "lags to tabulate")->required()->delimiter(',');
    d2->add_option("--extent", d_extent)->capture_default_str();
    d2->add_option("--points", d_points)->capture_default_str();
    d2->add_option("--out", d_out);

    try {
        const auto args = expand_config(std::vector<std::string>(argv, argv + argc));
        std::vector<const char*> ptrs;
        for (const auto& a : args) ptrs.push_back(a.c_str());
        app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*pipe) {
            cfg.input = input;
            cfg.output_dir = out_dir;
            cfg.bandwidth.kind = bw_kind == "relative" ? Bandwidth::Kind::Relative : Bandwidth::Kind::Absolute;
            cfg.grid.half_width = grid_half_width;
            cfg.detrend = !no_detrend;
            cfg.policy = origins == "overlapping" ? OriginPolicy::Overlapping : OriginPolicy::NonOverlapping;
            cfg.csv.delimiter = delimiter;
            cfg.csv.timestamps = timestamps == "minutes"   ? TimestampKind::Minutes
                                 : timestamps == "iso8601" ? TimestampKind::Iso8601
                                                           : TimestampKind::Auto;
            PipelineResult r;
            try {
                r = run_pipeline(cfg);
            } catch (const Error&) {
                const fs::path marker = fs::path(out_dir) / "FAILED";
                if (fs::exists(marker)) std::cerr << read_text(marker);
                throw;
            }
            std::cout << "wrote " << r.manifest.at("artifacts").size() << " artifacts to "
                      << (fs::path(out_dir) / "manifest.json").string() << "\n";
        } else if (*synth) {
            if (s_n == 0) throw ValidationError("synth: --n must be at least 1");
            std::vector<ReturnEnsemble> ens;
            const auto lags = lag_ladder(s_lag_min, s_lag_max, s_ppd);
            nlohmann::json gen;
            if (two_regime) {
                spec.weak_q = s_q;
                spec.weak = {s_alpha, s_d};
                spec.validate();
                gen = {{"mode", "two-regime"}, {"spec", spec.to_json()}};
            } else {
                ScalingLaw{s_alpha, s_d}.validate();
                QParams{s_q, 1.0}.validate();
                gen = {{"mode", "selfsim"}, {"q", s_q}, {"alpha", s_alpha}, {"d_coef", s_d}};
            }
            gen["seed"] = s_seed;
            gen["n_per_lag"] = s_n;
            for (std::size_t i = 0; i < lags.size(); ++i) {
                const auto seed = derive_seed(s_seed, i);
                ens.push_back(two_regime ? synth_two_regime(spec, lags[i], s_n, seed)
                                         : synth_selfsim(s_q, ScalingLaw{s_alpha, s_d}, lags[i], s_n, seed));
            }
            std::cout << write_ensembles(ens, s_out, gen).string() << "\n";
        } else if (*verify) {
            const auto v = verify_pme(v_m, v_t1, v_t2, v_points, v_half, v_c, scheme_from_string(v_scheme));
            emit(v.to_json().dump(2) + "\n", v_out);
        } else if (*fit) {
            const auto p = read_pdf(f_pdf);
            const auto r = fit_qgauss(p, parse_window(f_window));
            emit(to_json(r).dump(2) + "\n", f_out);
        } else if (*collapse) {
            const fs::path run = c_run;
            FitOptions opts;
            const auto fits = read_lag_fits(run / "lag_fits.json", &opts);
            const auto pdfs = read_pdf_dir(run / "pdfs");
            emit(collapse_json(stage_collapse(pdfs, fits, opts)).dump(2) + "\n", c_out);
        } else if (*d2) {
            const auto entries = governing_from_json(nlohmann::json::parse(read_text(d_gov)));
            emit(d2_grid_csv(entries, d_lags, d_extent, d_points), d_out);
        }
    } catch (const ComputationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << "\n";
        return 1;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
