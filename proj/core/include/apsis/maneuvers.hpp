// Two-burn transfer planning between circular coplanar orbits.
#pragma once

namespace apsis {

struct HohmannSolution {
  double dv1 = 0.0;            // signed tangential impulse at departure, m/s
  double dv2 = 0.0;            // signed tangential impulse at arrival, m/s
  double transfer_time = 0.0;  // half the transfer-ellipse period, s
  double a_transfer = 0.0;     // transfer semi-major axis, m
  double f1 = 0.0;             // thrust magnitude realizing dv1 over burn_dt, N
  double f2 = 0.0;             // thrust magnitude realizing dv2 over burn_dt, N
  double mdot1 = 0.0;          // propellant rate of the first burn, kg/s
  double fuel_used = 0.0;      // total propellant over both burns, kg
  bool feasible = false;       // both impulses fit the vehicle's dv capacity
};

// Ideal-rocket delta-v budget, isp * g0 * ln(m0 / m_dry).
double tsiolkovsky_capacity(double m0, double m_dry, double isp);

// Plans the transfer from radius R to R_prime. The first burn is sized as
// f1 = dv1 * m0 / burn_dt; the second accounts for the mass already spent,
// f2 = dv2 * (m0 - mdot1 * burn_dt) / burn_dt. Feasibility compares
// |dv1| + |dv2| against tsiolkovsky_capacity(m0, m0 - fuel, isp).
HohmannSolution hohmann_solve(double R, double R_prime, double mu, double m0,
                              double fuel, double isp, double burn_dt);

}  // namespace apsis
