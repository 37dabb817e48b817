// stresstopo: command-line driver for stress-minimizing topology optimization.
//
//   stresstopo optimize        --problem cantilever --out run1
//   stresstopo verify-gradient --nelx 40 --nely 20 --p 8 --out check
//   stresstopo solve-only      --problem lbracket2d --nelx 100 --nely 100

#include "stresstopo/io.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>

using namespace stresstopo;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kSolver = 3, kIo = 4, kCheckFailed = 5 };

struct Cli {
    std::string command;
    std::string config_path;
    std::string resume_path;
    RunConfig cfg;
    std::map<std::string, std::string> overrides; // flag name -> text, applied after the config file
};

void print_summary(const std::string &label, double pn0, double pn1, double max_mises, double volume) {
    std::printf("%s: initial pnorm %.6g, final pnorm %.6g, max von Mises %.6g, volume %.6g\n", label.c_str(), pn0,
                pn1, max_mises, volume);
}

void write_outputs(const RunConfig &cfg, const GridMesh &mesh, int index, const Vector &x, const Vector &x_filtered,
                   const StressField &field, const MmaState *mma) {
    const fs::path dir(cfg.out);
    write_vtk(mesh, x_filtered, field.mises, dir / numbered("field", index, ".vtk"));
    if (mma) {
        Checkpoint c;
        c.nelx = mesh.nelx();
        c.nely = mesh.nely();
        c.nelz = mesh.nelz();
        c.x = x;
        c.mma = *mma;
        write_checkpoint(c, dir / numbered("density", index, ".chk"));
    }
}

int run_optimize(const RunConfig &cfg, const std::string &resume_path) {
    const ProblemDefinition pd = cfg.to_problem();
    const GridMesh mesh = pd.mesh();
    StressMinimizer opt(pd, cfg.optimizer_options());

    Vector x0;
    std::optional<MmaState> resume;
    std::vector<IterationRecord> history;
    if (!resume_path.empty()) {
        Checkpoint c = read_checkpoint(resume_path);
        if (c.nelx != mesh.nelx() || c.nely != mesh.nely() || c.nelz != mesh.nelz())
            throw ConfigError("checkpoint " + resume_path + " was written for a different mesh");
        x0 = c.x;
        c.mma.settings = cfg.optimizer_options().mma;
        resume = c.mma;
        const fs::path hist = fs::path(cfg.out) / "history.csv";
        if (fs::exists(hist))
            for (const auto &r : read_history_csv(hist))
                if (r.iter <= c.mma.iter)
                    history.push_back(r);
        std::printf("resuming from %s at iteration %d\n", resume_path.c_str(), c.mma.iter);
    }

    const fs::path hist_path = fs::path(cfg.out) / "history.csv";
    write_history_csv(history, hist_path);

    Vector last_xf;
    StressField last_field;
    int last_iter = 0;
    auto callback = [&](const IterationRecord &rec, const Vector &x, const Vector &xf, const StressField &field) {
        history.push_back(rec);
        write_history_csv(history, hist_path);
        std::printf("it %4d  pnorm %12.6g  max vm %12.6g  vol %.5f  change %.4f  (%.2fs)\n", rec.iter, rec.pnorm,
                    rec.max_mises, rec.volume, rec.change, rec.seconds);
        std::fflush(stdout);
        last_xf = xf;
        last_field = field;
        last_iter = rec.iter;
        if (cfg.checkpoint_interval > 0 && rec.iter % cfg.checkpoint_interval == 0)
            write_outputs(cfg, mesh, rec.iter, x, xf, field, opt.current_state());
        return true;
    };

    OptimizationResult res = opt.run(x0, callback, resume);

    if (last_iter > 0)
        write_outputs(cfg, mesh, last_iter, res.x, last_xf, last_field, &res.mma);
    else {
        const StressField f = opt.analysis().stresses(opt.physical_density(res.x));
        write_outputs(cfg, mesh, 0, res.x, opt.physical_density(res.x), f, &res.mma);
    }

    if (!history.empty())
        print_summary(pd.name, history.front().pnorm, history.back().pnorm, history.back().max_mises,
                      history.back().volume);
    return kOk;
}

int run_verify(const RunConfig &cfg) {
    ProblemDefinition pd = cfg.to_problem();
    const GridMesh mesh = pd.mesh();
    StressAnalysis analysis(StressProblem(mesh, pd.model, pd.stress, pd.boundary_conditions(), pd.solver));

    Vector x = pd.initial_density();
    if (cfg.random_density) {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (int e = 0; e < mesh.nele(); ++e)
            if (!pd.passive[static_cast<std::size_t>(e)])
                x[e] = 0.9 * unit(rng) + 0.1;
    }
    const DifferenceMode mode = cfg.fd_mode == "forward" ? DifferenceMode::Forward : DifferenceMode::Central;
    const VerificationReport rep = finite_difference_check(analysis, x, cfg.eps, mode);
    write_verification_csv(rep, (fs::path(cfg.out) / "gradient_check.csv").string());

    int over_loose = 0;
    for (Eigen::Index j = 0; j < rep.rel_err.size(); ++j)
        if (!std::isnan(rep.rel_err[j]) && rep.rel_err[j] > 1e-2)
            ++over_loose;
    const double frac = rep.fraction_within(cfg.grad_tol);
    const bool pass = frac >= 0.99 && over_loose == 0;
    std::printf("gradient check (%s, eps %.3g): %d elements checked, %zu below floor, max rel err %.3e, median "
                "%.3e, %.2f%% within %.1e -> %s\n",
                to_string(mode).c_str(), cfg.eps, rep.checked(), rep.flagged.size(), rep.max_err, rep.median_err,
                100.0 * frac, cfg.grad_tol, pass ? "PASS" : "FAIL");
    return pass ? kOk : kCheckFailed;
}

int run_solve_only(const RunConfig &cfg) {
    const ProblemDefinition pd = cfg.to_problem();
    const GridMesh mesh = pd.mesh();
    StressMinimizer opt(pd, cfg.optimizer_options());
    const Vector x = pd.initial_density();
    const Vector xf = opt.physical_density(x);
    const auto t0 = std::chrono::steady_clock::now();
    const StressField field = opt.analysis().stresses(xf);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_vtk(mesh, xf, field.mises, fs::path(cfg.out) / numbered("field", 0, ".vtk"));
    std::printf("solver %s (%s), %ld iterations, residual %.3e, %.2fs\n",
                to_string(opt.analysis().solver().method()).c_str(), direct_backend_name().c_str(),
                opt.analysis().solver().last_iterations(), opt.analysis().solver().last_residual(), secs);
    print_summary(pd.name, field.pnorm, field.pnorm, field.max_mises(), xf.mean());
    return kOk;
}

void log_error(const RunConfig &cfg, const std::string &kind, const std::string &msg) {
    std::fprintf(stderr, "error (%s): %s\n", kind.c_str(), msg.c_str());
    std::error_code ec;
    fs::create_directories(cfg.out, ec);
    if (ec)
        return;
    std::ofstream log(fs::path(cfg.out) / "error.log", std::ios::app);
    log << "kind: " << kind << "\nmessage: " << msg << "\n";
}

} // namespace

int main(int argc, char **argv) {
    Cli cli;
    CLI::App app{"Stress-based topology optimization (p-norm von Mises, SIMP, MMA)"};
    app.require_subcommand(1);

    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--config", cli.config_path, "key = value configuration file");
        for (const char *name : {"problem", "nelx", "nely", "nelz", "volfrac", "nu", "pl", "q", "p", "radius", "solver",
                                 "tol", "maxit", "move", "iters", "out", "seed", "checkpoint-interval", "eps",
                                 "fd-mode", "grad-tol"}) {
            const std::string flag = std::string("--") + name;
            sub->add_option_function<std::string>(
                flag, [&cli, key = std::string(name)](const std::string &v) { cli.overrides[key] = v; },
                std::string("override ") + name);
        }
        sub->add_flag_function(
            "--row-normalized-chain", [&cli](std::int64_t) { cli.overrides["row_normalized_chain"] = "true"; },
            "chain sensitivities with (H g)./Hs instead of the exact transpose");
    };

    CLI::App *opt = app.add_subcommand("optimize", "run the MMA optimization loop");
    add_common(opt);
    opt->add_option("--resume", cli.resume_path, "continue from a density_XXXX.chk checkpoint");
    opt->add_flag_function(
        "--pin-passive", [&cli](std::int64_t) { cli.overrides["pin_passive"] = "true"; },
        "hold passive design variables at the floor instead of only clamping their filtered density");
    CLI::App *ver = app.add_subcommand("verify-gradient", "compare adjoint and finite-difference gradients");
    add_common(ver);
    ver->add_flag_function(
        "--random-density", [&cli](std::int64_t) { cli.overrides["random_density"] = "true"; },
        "x = 0.9 rand + 0.1 instead of x = volfrac");
    CLI::App *sol = app.add_subcommand("solve-only", "one FEM and stress evaluation at the initial design");
    add_common(sol);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? kOk : kConfig;
    }
    cli.command = app.get_subcommands().front()->get_name();

    try {
        if (!cli.config_path.empty()) {
            std::ifstream in(cli.config_path);
            if (!in)
                throw ConfigError("cannot open config file " + cli.config_path);
            parse_config_text(cli.cfg, in, cli.config_path);
        }
        for (const auto &[k, v] : cli.overrides)
            apply_config_value(cli.cfg, k, v);
        if (cli.command == "verify-gradient" && !cli.overrides.count("nelx") && cli.config_path.empty()) {
            cli.cfg.nelx = 40;
            cli.cfg.nely = 20;
            cli.cfg.nelz = 1;
        }
        cli.cfg.validate();
    } catch (const std::exception &e) {
        log_error(cli.cfg, "config", e.what());
        return kConfig;
    }
    for (const auto &w : cli.cfg.warnings)
        std::fprintf(stderr, "warning: %s\n", w.c_str());

    try {
        fs::create_directories(cli.cfg.out);
        write_file_atomic(fs::path(cli.cfg.out) / "config.txt",
                          [&](std::ostream &o) { o << "# command = " << cli.command << '\n' << format_config(cli.cfg); });
        if (cli.command == "optimize")
            return run_optimize(cli.cfg, cli.resume_path);
        if (cli.command == "verify-gradient")
            return run_verify(cli.cfg);
        return run_solve_only(cli.cfg);
    } catch (const ConfigError &e) {
        log_error(cli.cfg, "config", e.what());
        return kConfig;
    } catch (const DomainError &e) {
        log_error(cli.cfg, "config", e.what());
        return kConfig;
    } catch (const StructuralError &e) {
        log_error(cli.cfg, "config", e.what());
        return kConfig;
    } catch (const SolverError &e) {
        log_error(cli.cfg, "solver", std::string(e.what()) + " (residual " + std::to_string(e.residual()) + ")");
        return kSolver;
    } catch (const SingularMatrixError &e) {
        log_error(cli.cfg, "solver", e.what());
        return kSolver;
    } catch (const SubproblemError &e) {
        log_error(cli.cfg, "optimizer", e.what());
        return kSolver;
    } catch (const IoError &e) {
        log_error(cli.cfg, "io", e.what());
        return kIo;
    } catch (const fs::filesystem_error &e) {
        log_error(cli.cfg, "io", e.what());
        return kIo;
    } catch (const std::exception &e) {
        log_error(cli.cfg, "error", e.what());
        return kFailure;
    }
}
