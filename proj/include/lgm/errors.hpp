#pragma once

#include <stdexcept>
#include <string>

namespace lgm {

/// Malformed model document, data table or graph. `path` names the offending key
/// (e.g. "random[0].hyper.prec.param") or file location.
class ValidationError : public std::runtime_error {
public:
    ValidationError(std::string path, const std::string& what)
        : std::runtime_error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class NotPositiveDefinite : public std::runtime_error {
public:
    explicit NotPositiveDefinite(int pivot)
        : std::runtime_error("matrix not positive definite at pivot " + std::to_string(pivot)),
          pivot_(pivot) {}
    int pivot() const noexcept { return pivot_; }

private:
    int pivot_;
};

class SingularConstraint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonConvergence : public std::runtime_error {
public:
    NonConvergence(const std::string& stage, int iterations)
        : std::runtime_error(stage + " did not converge after " + std::to_string(iterations) +
                             " iterations"),
          stage_(stage), iterations_(iterations) {}
    const std::string& stage() const noexcept { return stage_; }
    int iterations() const noexcept { return iterations_; }

private:
    std::string stage_;
    int iterations_;
};

class FitFailed : public std::runtime_error {
public:
    FitFailed(std::string stage, const std::string& detail)
        : std::runtime_error("fit failed in " + stage + ": " + detail), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

class ConfigNotStored : public std::runtime_error {
public:
    ConfigNotStored()
        : std::runtime_error("posterior sampling requires control.compute.config = true") {}
};

class MultimodalMarginal : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lgm
