#pragma once

// Small clustered datasets for unit tests, drawn independently of the
// library's simulation module.

#include "frailty/model.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace testdata {

struct Options {
  std::size_t families = 20;
  std::size_t family_size = 2;
  std::size_t p = 1;
  double beta = 0.5;
  double theta = 1.0;
  double censor_mean = 130.0;  // Normal(censor_mean, 15²) censoring
  bool zero_covariates = false;
};

inline frailty::ClusteredDataset make(const Options& opt, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<frailty::Family> fams;
  for (std::size_t i = 0; i < opt.families; ++i) {
    double w = 1.0;
    if (opt.theta > 0.0) {
      std::gamma_distribution<double> g(1.0 / opt.theta, opt.theta);
      w = g(rng);
    }
    frailty::Family fam{"fam" + std::to_string(i), {}};
    for (std::size_t j = 0; j < opt.family_size; ++j) {
      frailty::Subject s;
      double lp = 0.0;
      for (std::size_t r = 0; r < opt.p; ++r) {
        const double z = opt.zero_covariates ? 0.0 : norm(rng);
        s.covariates.push_back(z);
        lp += (r == 0 ? opt.beta : -0.3) * z;
      }
      const double t0 = 100.0 * std::pow(-std::log(1.0 - unif(rng)) / (w * std::exp(lp)), 1.0 / 4.6);
      const double c = std::max(0.0, opt.censor_mean + 15.0 * norm(rng));
      s.time = std::min(t0, c);
      s.status = t0 <= c ? 1 : 0;
      fam.subjects.push_back(s);
    }
    fams.push_back(std::move(fam));
  }
  return frailty::ClusteredDataset(std::move(fams));
}

}  // namespace testdata
