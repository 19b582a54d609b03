#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lgm::cli {

struct FitCommand {
    std::string model;
    std::string data;
    std::string out;
    std::uint64_t seed = 1;
    int threads = 1;
    std::optional<bool> safe;
    int samples = 0;
};

/// Fits a model file to a data file and writes every result artifact under `out`.
/// Returns 0, 2 on invalid input, 3 when the fit fails.
int cmd_fit(const FitCommand& cmd, std::ostream& log, std::ostream& err);

struct MarginalCommand {
    std::string op;  // d, p, q, t, e, hpd, z, r, m
    std::string file;
    std::vector<double> at;
    std::string fun = "identity";
    double level = 0.95;
    int n = 1000;
    std::uint64_t seed = 1;
};

int cmd_marginal(const MarginalCommand& cmd, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches to a subcommand.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace lgm::cli
