#include "apsis/maneuvers.hpp"

#include <cmath>
#include <stdexcept>

#include "apsis/frames.hpp"

namespace apsis {
namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;
}

double tsiolkovsky_capacity(double m0, double m_dry, double isp) {
  if (!(m0 > 0.0) || !(m_dry > 0.0) || m_dry > m0 || !(isp > 0.0)) {
    throw std::invalid_argument("tsiolkovsky_capacity: bad masses or isp");
  }
  return isp * kStandardGravity * std::log(m0 / m_dry);
}

HohmannSolution hohmann_solve(double R, double R_prime, double mu, double m0,
                              double fuel, double isp, double burn_dt) {
  if (!(R > 0.0) || !(R_prime > 0.0) || !(mu > 0.0)) {
    throw std::invalid_argument("hohmann_solve: bad geometry");
  }
  if (!(m0 > 0.0) || fuel < 0.0 || !(m0 - fuel > 0.0) || !(isp > 0.0) ||
      !(burn_dt > 0.0)) {
    throw std::invalid_argument("hohmann_solve: bad vehicle parameters");
  }

  HohmannSolution sol;
  sol.a_transfer = 0.5 * (R + R_prime);
  sol.dv1 = std::sqrt(mu / R) * (std::sqrt(2.0 * R_prime / (R + R_prime)) - 1.0);
  sol.dv2 = std::sqrt(mu / R_prime) * (1.0 - std::sqrt(2.0 * R / (R + R_prime)));
  sol.transfer_time =
      kPi * std::sqrt(sol.a_transfer * sol.a_transfer * sol.a_transfer / mu);

  sol.f1 = std::abs(sol.dv1) * m0 / burn_dt;
  sol.mdot1 = sol.f1 / (isp * kStandardGravity);
  const double m1 = m0 - sol.mdot1 * burn_dt;
  sol.f2 = std::abs(sol.dv2) * m1 / burn_dt;
  const double mdot2 = sol.f2 / (isp * kStandardGravity);
  sol.fuel_used = (sol.mdot1 + mdot2) * burn_dt;

  const double capacity = tsiolkovsky_capacity(m0, m0 - fuel, isp);
  sol.feasible = std::abs(sol.dv1) + std::abs(sol.dv2) <= capacity;
  return sol;
}

}  // namespace apsis
