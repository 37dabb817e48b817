#pragma once

// Run configuration, VTK field export, history CSV and density checkpoints.

#include "stresstopo/benchmarks.hpp"
#include "stresstopo/errors.hpp"
#include "stresstopo/mesh.hpp"
#include "stresstopo/mma.hpp"
#include "stresstopo/optimizer.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace stresstopo {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    std::string problem = "cantilever"; ///< cantilever | lbracket2d | lbracket3d
    std::optional<int> nelx, nely, nelz;
    double volfrac = 0.3;
    double nu = 0.3;
    double pl = 3.0;
    double q = 0.5;
    double p = 10.0;
    double radius = 2.5;
    SolverMethod solver = SolverMethod::Automatic;
    double tol = 1e-8;
    long maxit = 5000;
    double move = 0.1;
    std::optional<int> iters;
    std::string out = "out";
    int checkpoint_interval = 10;
    unsigned long seed = 1;
    bool row_normalized_chain = false;
    bool pin_passive = false;
    // gradient verification
    bool random_density = false;
    double eps = 1e-4;
    std::string fd_mode = "central";
    double grad_tol = 1e-4;

    std::vector<std::string> warnings;

    /// Mesh size and iteration budget of the selected benchmark, unless overridden.
    void fill_defaults() {
        int dx = 200, dy = 60, dz = 1, it = 100;
        if (problem == "lbracket2d") {
            dx = dy = 200;
            it = 120;
        } else if (problem == "lbracket3d") {
            dx = dy = 100;
            dz = 30;
            it = 60;
        }
        if (!nelx)
            nelx = dx;
        if (!nely)
            nely = dy;
        if (!nelz)
            nelz = dz;
        if (!iters)
            iters = it;
    }

    void validate() {
        if (problem != "cantilever" && problem != "lbracket2d" && problem != "lbracket3d")
            throw ConfigError("unknown problem '" + problem + "' (expected cantilever, lbracket2d or lbracket3d)");
        fill_defaults();
        auto need = [](bool ok, const std::string &what) {
            if (!ok)
                throw ConfigError(what);
        };
        need(*nelx >= 1 && *nely >= 1 && *nelz >= 1, "mesh dimensions must be >= 1");
        if (problem == "lbracket2d")
            need(*nelz == 1 && *nelx == *nely && *nelx % 2 == 0, "lbracket2d needs nelx = nely even and nelz = 1");
        if (problem == "lbracket3d")
            need(*nelx == *nely && *nelx % 2 == 0, "lbracket3d needs nelx = nely even");
        need(volfrac > 0.0 && volfrac <= 1.0, "volfrac must lie in (0, 1], got " + std::to_string(volfrac));
        need(nu >= 0.0 && nu < 0.5, "nu must lie in [0, 0.5), got " + std::to_string(nu));
        need(pl >= 1.0, "pl must be >= 1, got " + std::to_string(pl));
        need(q >= 0.0, "q must be >= 0, got " + std::to_string(q));
        need(p >= 1.0, "p must be >= 1, got " + std::to_string(p));
        need(radius > 0.0, "radius must be > 0, got " + std::to_string(radius));
        need(tol > 0.0, "tol must be > 0");
        need(maxit >= 1, "maxit must be >= 1");
        need(move > 0.0 && move <= 1.0, "move must lie in (0, 1], got " + std::to_string(move));
        need(*iters >= 0, "iters must be >= 0");
        need(checkpoint_interval >= 0, "checkpoint_interval must be >= 0");
        need(eps > 0.0 && eps < 0.5, "eps must lie in (0, 0.5)");
        need(fd_mode == "central" || fd_mode == "forward", "fd_mode must be central or forward");
        need(grad_tol > 0.0, "grad_tol must be > 0");
        if (p > StressParams::kIllConditionedP) {
            const std::string w = "p = " + std::to_string(p) + " exceeds " +
                                  std::to_string(StressParams::kIllConditionedP) +
                                  "; the aggregated stress becomes ill-conditioned and iterations may oscillate";
            if (std::find(warnings.begin(), warnings.end(), w) == warnings.end())
                warnings.push_back(w);
        }
    }

    ProblemDefinition to_problem() const {
        ProblemDefinition pd = problem == "cantilever" ? cantilever(*nelx, *nely, *nelz)
                               : problem == "lbracket2d" ? lbracket_2d(*nelx)
                                                         : lbracket_3d(*nelx, *nely, *nelz);
        pd.volfrac = volfrac;
        pd.model.nu = nu;
        pd.model.pl = pl;
        pd.stress.q = q;
        pd.stress.p = p;
        pd.radius = radius;
        if (solver != SolverMethod::Automatic)
            pd.solver.method = solver;
        pd.solver.tol = tol;
        pd.solver.maxit = maxit;
        pd.move = move;
        pd.iterations = *iters;
        pd.validate();
        return pd;
    }

    OptimizerOptions optimizer_options() const {
        OptimizerOptions o;
        o.max_iterations = *iters;
        o.chain_rule = row_normalized_chain ? FilterChainRule::RowNormalized : FilterChainRule::Exact;
        o.pin_passive = pin_passive;
        o.mma.move = move;
        return o;
    }
};

namespace detail {

inline std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T> T parse_number(const std::string &text, const std::string &key) {
    T v{};
    const char *first = text.data();
    const char *last = first + text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw ConfigError("invalid value '" + text + "' for " + key);
    return v;
}

inline bool parse_bool(const std::string &text, const std::string &key) {
    if (text == "1" || text == "true" || text == "yes" || text == "on")
        return true;
    if (text == "0" || text == "false" || text == "no" || text == "off")
        return false;
    throw ConfigError("invalid boolean '" + text + "' for " + key);
}

} // namespace detail

inline SolverMethod parse_solver_method(const std::string &s) {
    if (s == "auto")
        return SolverMethod::Automatic;
    if (s == "direct")
        return SolverMethod::Direct;
    if (s == "pcg")
        return SolverMethod::Pcg;
    throw ConfigError("unknown solver '" + s + "' (expected auto, direct or pcg)");
}

/// Sets one field by key; keys use underscores (dashes are accepted too).
inline void apply_config_value(RunConfig &cfg, std::string key, const std::string &value) {
    std::replace(key.begin(), key.end(), '-', '_');
    using detail::parse_bool;
    using detail::parse_number;
    static const std::map<std::string, std::function<void(RunConfig &, const std::string &, const std::string &)>>
        setters = {
            {"problem", [](RunConfig &c, const std::string &v, const std::string &) { c.problem = v; }},
            {"nelx", [](RunConfig &c, const std::string &v, const std::string &k) { c.nelx = parse_number<int>(v, k); }},
            {"nely", [](RunConfig &c, const std::string &v, const std::string &k) { c.nely = parse_number<int>(v, k); }},
            {"nelz", [](RunConfig &c, const std::string &v, const std::string &k) { c.nelz = parse_number<int>(v, k); }},
            {"volfrac", [](RunConfig &c, const std::string &v, const std::string &k) { c.volfrac = parse_number<double>(v, k); }},
            {"nu", [](RunConfig &c, const std::string &v, const std::string &k) { c.nu = parse_number<double>(v, k); }},
            {"pl", [](RunConfig &c, const std::string &v, const std::string &k) { c.pl = parse_number<double>(v, k); }},
            {"q", [](RunConfig &c, const std::string &v, const std::string &k) { c.q = parse_number<double>(v, k); }},
            {"p", [](RunConfig &c, const std::string &v, const std::string &k) { c.p = parse_number<double>(v, k); }},
            {"radius", [](RunConfig &c, const std::string &v, const std::string &k) { c.radius = parse_number<double>(v, k); }},
            {"solver", [](RunConfig &c, const std::string &v, const std::string &) { c.solver = parse_solver_method(v); }},
            {"tol", [](RunConfig &c, const std::string &v, const std::string &k) { c.tol = parse_number<double>(v, k); }},
            {"maxit", [](RunConfig &c, const std::string &v, const std::string &k) { c.maxit = parse_number<long>(v, k); }},
            {"move", [](RunConfig &c, const std::string &v, const std::string &k) { c.move = parse_number<double>(v, k); }},
            {"iters", [](RunConfig &c, const std::string &v, const std::string &k) { c.iters = parse_number<int>(v, k); }},
            {"out", [](RunConfig &c, const std::string &v, const std::string &) { c.out = v; }},
            {"checkpoint_interval", [](RunConfig &c, const std::string &v, const std::string &k) { c.checkpoint_interval = parse_number<int>(v, k); }},
            {"seed", [](RunConfig &c, const std::string &v, const std::string &k) { c.seed = parse_number<unsigned long>(v, k); }},
            {"row_normalized_chain", [](RunConfig &c, const std::string &v, const std::string &k) { c.row_normalized_chain = parse_bool(v, k); }},
            {"pin_passive", [](RunConfig &c, const std::string &v, const std::string &k) { c.pin_passive = parse_bool(v, k); }},
            {"random_density", [](RunConfig &c, const std::string &v, const std::string &k) { c.random_density = parse_bool(v, k); }},
            {"eps", [](RunConfig &c, const std::string &v, const std::string &k) { c.eps = parse_number<double>(v, k); }},
            {"fd_mode", [](RunConfig &c, const std::string &v, const std::string &) { c.fd_mode = v; }},
            {"grad_tol", [](RunConfig &c, const std::string &v, const std::string &k) { c.grad_tol = parse_number<double>(v, k); }},
        };
    const auto it = setters.find(key);
    if (it == setters.end())
        throw ConfigError("unknown key '" + key + "'");
    it->second(cfg, value, key);
}

/// Flat key = value text; '#' starts a comment.  Unknown keys and malformed
/// lines are errors naming the line.
inline void parse_config_text(RunConfig &cfg, std::istream &in, const std::string &source = "<config>") {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        line = detail::trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key or value");
        try {
            apply_config_value(cfg, key, value);
        } catch (const ConfigError &e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

inline RunConfig parse_config(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file " + path);
    RunConfig cfg;
    parse_config_text(cfg, in, path);
    cfg.validate();
    return cfg;
}

/// key = value echo of every field, readable by parse_config_text.
inline std::string format_config(const RunConfig &c) {
    std::ostringstream o;
    o.precision(17);
    o << "problem = " << c.problem << '\n';
    if (c.nelx)
        o << "nelx = " << *c.nelx << '\n';
    if (c.nely)
        o << "nely = " << *c.nely << '\n';
    if (c.nelz)
        o << "nelz = " << *c.nelz << '\n';
    o << "volfrac = " << c.volfrac << '\n'
      << "nu = " << c.nu << '\n'
      << "pl = " << c.pl << '\n'
      << "q = " << c.q << '\n'
      << "p = " << c.p << '\n'
      << "radius = " << c.radius << '\n'
      << "solver = " << to_string(c.solver) << '\n'
      << "tol = " << c.tol << '\n'
      << "maxit = " << c.maxit << '\n'
      << "move = " << c.move << '\n';
    if (c.iters)
        o << "iters = " << *c.iters << '\n';
    o << "out = " << c.out << '\n'
      << "checkpoint_interval = " << c.checkpoint_interval << '\n'
      << "seed = " << c.seed << '\n'
      << "row_normalized_chain = " << (c.row_normalized_chain ? "true" : "false") << '\n'
      << "pin_passive = " << (c.pin_passive ? "true" : "false") << '\n'
      << "random_density = " << (c.random_density ? "true" : "false") << '\n'
      << "eps = " << c.eps << '\n'
      << "fd_mode = " << c.fd_mode << '\n'
      << "grad_tol = " << c.grad_tol << '\n';
    return o.str();
}

// ---------------------------------------------------------------------------
// Files

/// Writes through a temporary file in the same directory and renames it over
/// `path`, so readers never observe a partial file.
inline void write_file_atomic(const fs::path &path, const std::function<void(std::ostream &)> &body) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot open " + tmp.string() + " for writing");
        body(out);
        out.flush();
        if (!out)
            throw IoError("error while writing " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Legacy ASCII VTK, STRUCTURED_POINTS with (nelx+1, nely+1, nelz+1) points,
/// unit spacing, origin 0, and two cell scalars "density" and "von_mises".
/// Cells are listed x fastest, then y (bottom up), then z; values use %.17g.
inline void write_vtk(const GridMesh &mesh, const Vector &density, const Vector &mises, const fs::path &path) {
    if (density.size() != mesh.nele() || mises.size() != mesh.nele())
        throw StructuralError("write_vtk: fields must have one value per element");
    write_file_atomic(path, [&](std::ostream &out) {
        out << "# vtk DataFile Version 3.0\n"
            << "stresstopo density and von Mises stress\n"
            << "ASCII\n"
            << "DATASET STRUCTURED_POINTS\n"
            << "DIMENSIONS " << mesh.nelx() + 1 << ' ' << mesh.nely() + 1 << ' ' << mesh.nelz() + 1 << '\n'
            << "ORIGIN 0 0 0\n"
            << "SPACING 1 1 1\n"
            << "CELL_DATA " << mesh.nele() << '\n';
        auto array = [&](const char *name, const Vector &v) {
            out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
            for (int k = 0; k < mesh.nelz(); ++k)
                for (int j = 0; j < mesh.nely(); ++j)
                    for (int i = 0; i < mesh.nelx(); ++i)
                        out << format_double(v[mesh.element_index(i, j, k)]) << '\n';
        };
        array("density", density);
        array("von_mises", mises);
    });
}

struct VtkFields {
    int nelx = 0, nely = 0, nelz = 0;
    std::map<std::string, Vector> cell_scalars; ///< indexed by element number
};

/// Reads files produced by write_vtk back into element order.
inline VtkFields read_vtk(const fs::path &path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    VtkFields f;
    std::string line, word;
    std::getline(in, line);
    if (line.rfind("# vtk DataFile", 0) != 0)
        throw IoError(path.string() + ": not a legacy VTK file");
    std::getline(in, line); // title
    in >> word;
    if (word != "ASCII")
        throw IoError(path.string() + ": only ASCII files are supported");
    int ncell = -1;
    while (in >> word) {
        if (word == "DATASET") {
            in >> word;
            if (word != "STRUCTURED_POINTS")
                throw IoError(path.string() + ": expected STRUCTURED_POINTS");
        } else if (word == "DIMENSIONS") {
            in >> f.nelx >> f.nely >> f.nelz;
            --f.nelx;
            --f.nely;
            --f.nelz;
        } else if (word == "ORIGIN" || word == "SPACING") {
            double a, b, c;
            in >> a >> b >> c;
        } else if (word == "CELL_DATA") {
            in >> ncell;
        } else if (word == "SCALARS") {
            std::string name, type;
            in >> name >> type;
            std::getline(in, line);
            in >> word >> line; // LOOKUP_TABLE default
            const GridMesh mesh(f.nelx, f.nely, f.nelz);
            if (ncell != mesh.nele())
                throw IoError(path.string() + ": CELL_DATA count does not match DIMENSIONS");
            Vector v(ncell);
            for (int k = 0; k < mesh.nelz(); ++k)
                for (int j = 0; j < mesh.nely(); ++j)
                    for (int i = 0; i < mesh.nelx(); ++i) {
                        std::string tok;
                        if (!(in >> tok))
                            throw IoError(path.string() + ": truncated array " + name);
                        v[mesh.element_index(i, j, k)] = std::strtod(tok.c_str(), nullptr);
                    }
            f.cell_scalars[name] = std::move(v);
        } else {
            throw IoError(path.string() + ": unexpected token '" + word + "'");
        }
    }
    return f;
}

inline const char *history_header() { return "iter,pnorm,max_mises,volume,change,seconds"; }

inline void write_history_csv(const std::vector<IterationRecord> &history, const fs::path &path) {
    write_file_atomic(path, [&](std::ostream &out) {
        out << history_header() << '\n';
        for (const auto &r : history)
            out << r.iter << ',' << format_double(r.pnorm) << ',' << format_double(r.max_mises) << ','
                << format_double(r.volume) << ',' << format_double(r.change) << ',' << format_double(r.seconds)
                << '\n';
    });
}

inline std::vector<IterationRecord> read_history_csv(const fs::path &path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (detail::trim(line) != history_header())
        throw IoError(path.string() + ": unexpected header");
    std::vector<IterationRecord> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::trim(line).empty())
            continue;
        std::istringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        if (cells.size() != 6)
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 6 columns");
        IterationRecord r;
        r.iter = std::stoi(cells[0]);
        r.pnorm = std::strtod(cells[1].c_str(), nullptr);
        r.max_mises = std::strtod(cells[2].c_str(), nullptr);
        r.volume = std::strtod(cells[3].c_str(), nullptr);
        r.change = std::strtod(cells[4].c_str(), nullptr);
        r.seconds = std::strtod(cells[5].c_str(), nullptr);
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints: the raw (unfiltered) design and the MMA state, as text.

struct Checkpoint {
    int nelx = 0, nely = 0, nelz = 0;
    Vector x;
    MmaState mma;
};

inline void write_checkpoint(const Checkpoint &c, const fs::path &path) {
    write_file_atomic(path, [&](std::ostream &out) {
        out << "stresstopo-checkpoint 1\n"
            << "mesh " << c.nelx << ' ' << c.nely << ' ' << c.nelz << '\n'
            << "iter " << c.mma.iter << '\n';
        auto vec = [&](const char *name, const Vector &v) {
            out << name << ' ' << v.size() << '\n';
            for (Eigen::Index i = 0; i < v.size(); ++i)
                out << format_double(v[i]) << '\n';
        };
        vec("x", c.x);
        vec("low", c.mma.low);
        vec("upp", c.mma.upp);
        vec("xold1", c.mma.xold1);
        vec("xold2", c.mma.xold2);
    });
}

inline Checkpoint read_checkpoint(const fs::path &path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    Checkpoint c;
    std::string word;
    int version = 0;
    in >> word >> version;
    if (word != "stresstopo-checkpoint" || version != 1)
        throw IoError(path.string() + ": not a checkpoint file");
    in >> word >> c.nelx >> c.nely >> c.nelz;
    if (word != "mesh")
        throw IoError(path.string() + ": missing mesh line");
    in >> word >> c.mma.iter;
    if (word != "iter")
        throw IoError(path.string() + ": missing iter line");
    auto vec = [&](const char *name, Vector &v) {
        Eigen::Index n = 0;
        in >> word >> n;
        if (word != name || n < 0)
            throw IoError(path.string() + ": expected array " + name);
        v.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            std::string tok;
            if (!(in >> tok))
                throw IoError(path.string() + ": truncated array " + name);
            v[i] = std::strtod(tok.c_str(), nullptr);
        }
    };
    vec("x", c.x);
    vec("low", c.mma.low);
    vec("upp", c.mma.upp);
    vec("xold1", c.mma.xold1);
    vec("xold2", c.mma.xold2);
    return c;
}

/// "prefix_0042.ext"
inline std::string numbered(const std::string &prefix, int n, const std::string &ext) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d", n);
    return prefix + "_" + buf + ext;
}

} // namespace stresstopo
