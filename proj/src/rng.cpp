#include "fedalc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedalc {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(root);
  for (std::uint64_t id : path) h = mix64(h ^ mix64(id + 0x632be59bd9b4e019ULL));
  return h;
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    std::uint64_t r = engine_();
    if (r >= threshold) return r % n;
  }
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  has_spare_ = true;
  return u * f;
}

namespace {

// Marsaglia-Tsang for shape >= 1.
double gamma_ge1(Rng& rng, double shape) {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// log of a Gamma(shape, 1) draw; stays finite for tiny shapes where the
// draw itself underflows.
double log_gamma_draw(Rng& rng, double shape) {
  if (shape >= 1.0) return std::log(gamma_ge1(rng, shape));
  const double g = gamma_ge1(rng, shape + 1.0);
  double u;
  do {
    u = rng.uniform();
  } while (u == 0.0);
  return std::log(g) + std::log(u) / shape;
}

}  // namespace

double Rng::gamma(double shape) { return std::exp(log_gamma_draw(*this, shape)); }

std::vector<double> Rng::dirichlet(double alpha, std::size_t k) {
  std::vector<double> logs(k);
  for (auto& l : logs) l = log_gamma_draw(*this, alpha);
  const double top = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (auto& l : logs) {
    l = std::exp(l - top);
    sum += l;
  }
  for (auto& l : logs) l /= sum;
  return logs;
}

}  // namespace fedalc
