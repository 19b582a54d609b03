#include "cli.hpp"

#include "lgm/engine.hpp"
#include "lgm/errors.hpp"
#include "lgm/marginals.hpp"
#include "lgm/sampler.hpp"
#include "lgm/spec_io.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>

namespace lgm::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string num(double v, int digits) {
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

/// File-system friendly form of a label: runs of other characters become '_'.
std::string file_stem(const std::string& label) {
    std::string out;
    for (char c : label) {
        const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-';
        if (keep)
            out += c;
        else if (!out.empty() && out.back() != '_')
            out += '_';
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out.empty() ? "unnamed" : out;
}

void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
}

const char* kSummaryHeader = "\"mean\",\"sd\",\"0.025quant\",\"0.5quant\",\"0.975quant\",\"mode\",\"kld\"";

std::string summary_cells(const SummaryRow& r) {
    std::string s;
    for (double v : {r.mean, r.sd, r.q025, r.q50, r.q975, r.mode, r.kld}) s += "," + num(v, 6);
    return s;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string out = std::string("\"name\",") + kSummaryHeader + "\n";
    for (const auto& r : rows) out += quoted(r.name) + summary_cells(r) + "\n";
    return out;
}

void write_marginals(const fs::path& dir, const std::vector<std::string>& names, const std::vector<Marginal>& ms) {
    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        std::string stem = file_stem(names[i]);
        if (seen[stem]++) stem += "_" + std::to_string(seen[stem]);
        write_file(dir / (stem + ".csv"), format_marginal_csv(ms[i]));
    }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

int write_outputs(const FitCommand& cmd, const ModelSpec& spec, const FitResult& res, double wall) {
    const fs::path out(cmd.out);
    fs::create_directories(out);
    write_file(out / "summary_fixed.csv", summary_csv(res.fixed));
    {
        std::string s = std::string("\"component\",\"ID\",") + kSummaryHeader + "\n";
        for (const auto& rs : res.random)
            for (const auto& r : rs.rows) s += quoted(rs.component) + "," + r.name + summary_cells(r) + "\n";
        write_file(out / "summary_random.csv", s);
    }
    write_file(out / "summary_hyperpar.csv", summary_csv(res.hyperpar));
    write_file(out / "summary_fitted.csv", summary_csv(res.fitted));

    if (spec.control.compute.return_marginals) {
        const fs::path m = out / "marginals";
        std::vector<std::string> names;
        for (const auto& r : res.fixed) names.push_back(r.name);
        write_marginals(m / "fixed", names, res.fixed_marginals);
        for (const auto& rs : res.random) {
            names.clear();
            for (const auto& r : rs.rows) names.push_back(r.name);
            write_marginals(m / "random" / file_stem(rs.component), names, rs.marginals);
        }
        names.clear();
        for (const auto& r : res.hyperpar) names.push_back(r.name);
        write_marginals(m / "hyperpar", names, res.hyperpar_marginals);
        names.clear();
        for (std::size_t i = 0; i < res.fitted.size(); ++i) names.push_back(std::to_string(i + 1));
        write_marginals(m / "fitted", names, res.fitted_marginals);
    }

    const auto& d = res.diagnostics;
    int failures = 0;
    for (bool f : d.cpo_failure) failures += f;
    json diag;
    diag["mlik"] = d.mlik;
    diag["dic"] = optional_number(d.dic);
    diag["p_dic"] = optional_number(d.p_dic);
    diag["mean_deviance"] = optional_number(d.mean_deviance);
    diag["deviance_of_mean"] = optional_number(d.deviance_of_mean);
    diag["waic"] = optional_number(d.waic);
    diag["p_waic"] = optional_number(d.p_waic);
    diag["cpo_failures"] = failures;
    diag["grid_points"] = res.grid.points.size();
    diag["mode_iterations"] = res.mode.iterations;
    diag["used_safe_mode"] = res.used_safe_mode;
    write_file(out / "diagnostics.json", diag.dump(2) + "\n");

    {
        std::string s = "\"index\",\"cpo\",\"failure\"\n";
        for (std::size_t i = 0; i < d.cpo.size(); ++i)
            s += std::to_string(i + 1) + "," + num(d.cpo[i], 6) + "," + (d.cpo_failure[i] ? "1" : "0") + "\n";
        write_file(out / "cpo.csv", s);
    }
    {
        std::string s;
        for (const auto& l : res.theta_labels) s += quoted("theta: " + l) + ",";
        for (std::size_t j = 0; j < res.theta_labels.size(); ++j) s += quoted("z" + std::to_string(j + 1)) + ",";
        s += "\"log_post\",\"weight\"\n";
        for (const auto& pt : res.grid.points) {
            for (int j = 0; j < pt.theta.size(); ++j) s += num(pt.theta(j), 12) + ",";
            for (int j = 0; j < pt.z.size(); ++j) s += num(pt.z(j), 12) + ",";
            s += num(pt.log_post, 12) + "," + num(pt.weight, 12) + "\n";
        }
        write_file(out / "grid.csv", s);
    }
    if (cmd.samples > 0) {
        const auto draws = posterior_sample(cmd.samples, res, cmd.seed, cmd.threads);
        std::string s;
        for (int j = 0; j < res.layout.n; ++j) s += quoted(latent_label(res.layout, j)) + ",";
        for (const auto& l : res.theta_labels) s += quoted(l) + ",";
        s.back() = '\n';
        for (const auto& dr : draws) {
            for (int j = 0; j < dr.x.size(); ++j) s += num(dr.x(j), 12) + ",";
            for (int j = 0; j < dr.theta.size(); ++j) s += num(from_internal(res.theta_transforms[j], dr.theta(j)), 12) + ",";
            s.back() = '\n';
        }
        write_file(out / "samples.csv", s);
    }

    json manifest;
    manifest["tool"] = "lgm";
    manifest["version"] = kVersion;
    manifest["model_file"] = cmd.model;
    manifest["data_file"] = cmd.data;
    manifest["seed"] = cmd.seed;
    manifest["threads"] = cmd.threads;
    manifest["samples"] = cmd.samples;
    manifest["safe"] = cmd.safe.value_or(spec.safe);
    manifest["used_safe_mode"] = res.used_safe_mode;
    manifest["config"] = json::parse(serialize_model_spec(spec));
    manifest["versions"] = {{"lgm", kVersion},
                            {"compiler", __VERSION__},
                            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                          "." + std::to_string(EIGEN_MINOR_VERSION)}};
    manifest["fit_seconds"] = res.seconds;
    manifest["wall_seconds"] = wall;
    write_file(out / "run_manifest.json", manifest.dump(2) + "\n");
    return 0;
}

std::function<double(double)> named_function(const std::string& name) {
    static const std::map<std::string, std::function<double(double)>> table = {
        {"identity", [](double v) { return v; }},
        {"exp", [](double v) { return std::exp(v); }},
        {"log", [](double v) { return std::log(v); }},
        {"inverse", [](double v) { return 1.0 / v; }},
        {"sqrt", [](double v) { return std::sqrt(v); }},
        {"square", [](double v) { return v * v; }},
        {"invsqrt", [](double v) { return 1.0 / std::sqrt(v); }},
        {"expit", [](double v) { return 1.0 / (1.0 + std::exp(-v)); }},
        {"logit", [](double v) { return std::log(v / (1.0 - v)); }},
    };
    const auto it = table.find(name);
    if (it == table.end()) throw ValidationError("--fun", "unknown function '" + name + "'");
    return it->second;
}

}  // namespace

int cmd_fit(const FitCommand& cmd, std::ostream& log, std::ostream& err) {
    const auto t0 = std::chrono::steady_clock::now();
    ModelSpec spec;
    std::optional<Model> model;
    try {
        spec = load_model_spec(cmd.model);
        if (cmd.samples > 0) spec.control.compute.config = true;
        const DataTable data = load_table(cmd.data, spec.response);
        model.emplace(spec, data);
    } catch (const ValidationError& e) {
        err << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        err << "invalid input: " << e.what() << "\n";
        return 2;
    }
    FitResult res;
    try {
        EngineOptions o;
        o.dz = spec.control.dz;
        o.diff_logdens = spec.control.diff_logdens;
        o.threads = cmd.threads;
        res = fit(*model, o, cmd.safe.value_or(spec.safe));
    } catch (const FitFailed& e) {
        err << "fit failed: " << e.what() << "\n";
        return 3;
    } catch (const ValidationError& e) {
        err << "invalid input: " << e.what() << "\n";
        return 2;
    }
    if (res.used_safe_mode) log << "note: fit needed the safe-mode retry\n";
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_outputs(cmd, spec, res, wall);
    log << "wrote results to " << cmd.out << " (" << num(res.seconds, 3) << " s)\n";
    return 0;
}

int cmd_marginal(const MarginalCommand& cmd, std::ostream& out, std::ostream& err) {
    try {
        const Marginal m = read_marginal_csv(cmd.file);
        const auto line = [&](double v) { out << num(v, 12) << "\n"; };
        if (cmd.op == "d" || cmd.op == "p" || cmd.op == "q") {
            if (cmd.at.empty()) throw ValidationError("--at", "at least one value is required");
            for (double v : cmd.at) line(cmd.op == "d" ? dmarginal(v, m) : cmd.op == "p" ? pmarginal(v, m) : qmarginal(v, m));
        } else if (cmd.op == "t") {
            out << format_marginal_csv(tmarginal(named_function(cmd.fun), m));
        } else if (cmd.op == "e") {
            line(emarginal(named_function(cmd.fun), m));
        } else if (cmd.op == "hpd") {
            const auto [lo, hi] = hpdmarginal(cmd.level, m);
            out << num(lo, 12) << " " << num(hi, 12) << "\n";
        } else if (cmd.op == "z") {
            const auto z = zmarginal(m);
            out << "mean " << num(z.mean, 12) << "\n"
                << "sd " << num(z.sd, 12) << "\n"
                << "q0.025 " << num(z.q025, 12) << "\n"
                << "q0.5 " << num(z.median, 12) << "\n"
                << "q0.975 " << num(z.q975, 12) << "\n";
        } else if (cmd.op == "r") {
            for (double v : rmarginal(cmd.n, m, cmd.seed)) line(v);
        } else if (cmd.op == "m") {
            line(mmarginal(m));
        } else {
            throw ValidationError("op", "unknown operation '" + cmd.op + "'");
        }
    } catch (const ValidationError& e) {
        err << "invalid input: " << e.what() << "\n";
        return 2;
    } catch (const MultimodalMarginal& e) {
        err << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        err << "invalid input: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Latent Gaussian model fitting by nested Laplace approximations", "lgm"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    FitCommand fc;
    bool safe = false, no_safe = false;
    auto* fit_cmd = app.add_subcommand("fit", "fit a model and write results");
    fit_cmd->add_option("--model", fc.model, "model JSON file")->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--data", fc.data, "data CSV file")->required()->check(CLI::ExistingFile);
    fit_cmd->add_option("--out", fc.out, "output directory")->required();
    fit_cmd->add_option("--seed", fc.seed, "sampling seed");
    fit_cmd->add_option("--threads", fc.threads, "worker threads")->check(CLI::PositiveNumber);
    auto* safe_flag = fit_cmd->add_flag("--safe", safe, "retry failed fits with conservative settings");
    fit_cmd->add_flag("--no-safe", no_safe, "do not retry failed fits")->excludes(safe_flag);
    fit_cmd->add_option("--samples", fc.samples, "joint posterior draws written to samples.csv")
        ->check(CLI::NonNegativeNumber);

    MarginalCommand mc;
    auto* marg_cmd = app.add_subcommand("marginal", "query a stored marginal density");
    marg_cmd->add_option("op", mc.op, "d, p, q, t, e, hpd, z, r or m")
        ->required()
        ->check(CLI::IsMember({"d", "p", "q", "t", "e", "hpd", "z", "r", "m"}));
    marg_cmd->add_option("file", mc.file, "marginal CSV (x,density)")->required();
    marg_cmd->add_option("--at", mc.at, "evaluation points (d, p) or probabilities (q)");
    marg_cmd->add_option("--fun", mc.fun, "identity, exp, log, inverse, sqrt, square, invsqrt, expit, logit");
    marg_cmd->add_option("--level", mc.level, "HPD mass")->check(CLI::Range(0.0, 1.0));
    marg_cmd->add_option("-n,--n", mc.n, "number of draws")->check(CLI::PositiveNumber);
    marg_cmd->add_option("--seed", mc.seed, "seed for draws");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        const CLI::App* sub = fit_cmd->parsed() ? fit_cmd : marg_cmd->parsed() ? marg_cmd : &app;
        err << sub->help();
        return 2;
    }
    if (*fit_cmd) {
        if (safe) fc.safe = true;
        if (no_safe) fc.safe = false;
        return cmd_fit(fc, out, err);
    }
    return cmd_marginal(mc, out, err);
}

}  // namespace lgm::cli
