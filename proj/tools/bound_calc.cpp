#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ulb/accountant.hpp"
#include "ulb/io.hpp"

namespace {

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty()) out.push_back(std::stod(cell));
  }
  return out;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

}  // namespace

// What-if tables for the noisy-fine-tuning unlearning bounds: epsilon* as a
// function of the step count, and the minimum steps needed for a target
// delta, for user-supplied constants.
int main(int argc, char** argv) {
  CLI::App app{"bound-calc: unlearning bound tabulator"};

  double alpha = 2.0;
  double contraction = 1.0;
  double eps_prime_4a = 0.0, eps_4am1 = 0.0, eps_2am1 = 0.0;
  double a_const = 1.0, b_const = 1.0, cc_const = 1.0;
  std::string k_values, deltas, losses, eps_out, steps_out;

  app.add_option("--alpha", alpha, "Renyi order (> 1)");
  app.add_option("--C", contraction, "contraction constant in exp(-C k / 2 alpha)");
  app.add_option("--eps4a-prime", eps_prime_4a, "divergence bound between the trained laws");
  app.add_option("--eps4am1", eps_4am1, "stationarity gap at order 4 alpha - 1");
  app.add_option("--eps2am1", eps_2am1, "stationarity gap at order 2 alpha - 1");
  app.add_option("--A", a_const, "step-count constant A");
  app.add_option("--B", b_const, "privacy-loss weight B");
  app.add_option("--Cc", cc_const, "stationarity weight C");
  app.add_option("--k-values", k_values, "comma-separated step counts for the epsilon* table");
  app.add_option("--deltas", deltas, "comma-separated target deltas for the min-steps table");
  app.add_option("--losses", losses, "comma-separated privacy losses P(x, 4 alpha)");
  app.add_option("--eps-out", eps_out, "epsilon* table output path (default stdout)");
  app.add_option("--steps-out", steps_out, "min-steps table output path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  if (!(alpha > 1.0)) {
    std::cerr << "error: alpha must be > 1\n";
    return 1;
  }
  if (k_values.empty() && (deltas.empty() || losses.empty())) {
    std::cerr << "error: provide --k-values and/or both --deltas and --losses\n";
    return 1;
  }

  try {
    if (!k_values.empty()) {
      ulb::BoundInputs in;
      in.alpha = alpha;
      in.contraction_c = contraction;
      in.eps_prime_4a = eps_prime_4a;
      in.eps_4am1 = eps_4am1;
      in.eps_2am1 = eps_2am1;
      std::ostringstream csv;
      csv << "k,epsilon_star\n";
      for (const auto& [k, eps] : ulb::tabulate_epsilon_star(in, parse_list(k_values))) {
        csv << ulb::fmt_double(k) << ',' << ulb::fmt_double(eps) << '\n';
      }
      emit(eps_out, csv.str());
    }
    if (!deltas.empty() && !losses.empty()) {
      ulb::MinStepsConstants c;
      c.a_const = a_const;
      c.b_const = b_const;
      c.c_const = cc_const;
      c.eps_4am1 = eps_4am1;
      c.eps_2am1 = eps_2am1;
      std::ostringstream csv;
      csv << "delta,privacy_loss,k,infeasible,degenerate\n";
      for (const ulb::MinStepsRow& row :
           ulb::tabulate_min_steps(parse_list(deltas), c, parse_list(losses))) {
        csv << ulb::fmt_double(row.delta) << ',' << ulb::fmt_double(row.privacy_loss) << ','
            << (row.infeasible ? "" : ulb::fmt_double(row.k)) << ',' << (row.infeasible ? 1 : 0)
            << ',' << (row.degenerate ? 1 : 0) << '\n';
      }
      emit(steps_out, csv.str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
