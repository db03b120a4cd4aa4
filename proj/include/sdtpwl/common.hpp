#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace sdtpwl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Failure raised by any stage of the pipeline. `stage()` names the module
/// that raised it ("fom", "rbf", ...) so the CLI can report it.
class Error : public std::runtime_error
{
public:
    Error(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what)
        , stage_(std::move(stage))
    {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

namespace units {
inline constexpr double day = 86400.0;            // s
inline constexpr double year = 365.0 * day;       // s
inline constexpr double milli_darcy = 9.869233e-16; // m^2
inline constexpr double centipoise = 1e-3;        // Pa s
inline constexpr double mega_pascal = 1e6;        // Pa
inline constexpr double bar = 1e5;                // Pa
} // namespace units

} // namespace sdtpwl
