#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedalc/data.hpp"
#include "fedalc/error.hpp"
#include "fedalc/rng.hpp"

namespace fedalc {

Batch Dataset::batch(std::span<const std::size_t> rows) const {
  Batch b{features.gather_rows(rows), {}};
  b.y.reserve(rows.size());
  for (std::size_t r : rows) b.y.push_back(labels[r]);
  return b;
}

Batch Dataset::all() const { return {features, labels}; }

std::vector<std::size_t> Dataset::histogram() const {
  std::vector<std::size_t> h(classes, 0);
  for (Label y : labels) ++h[static_cast<std::size_t>(y)];
  return h;
}

Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n > ds.size()) {
    throw ValidationError("subsample: n=" + std::to_string(n) + " outside [1, " + std::to_string(ds.size()) + "]");
  }
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots end up a uniform draw.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.uniform_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  Batch b = ds.batch(idx);
  return Dataset{std::move(b.x), std::move(b.y), ds.classes, ds.split};
}

Dataset synthetic_blobs(std::size_t classes, std::size_t dim, std::size_t n_per_class, double spread,
                        std::uint64_t seed, Split split) {
  if (classes < 2 || dim < 1) throw ValidationError("synthetic_blobs: need at least 2 classes and 1 dimension");
  if (dim < 64 && (std::size_t{1} << dim) < classes) {
    throw ValidationError("synthetic_blobs: 2^dim must be at least the class count");
  }
  if (n_per_class == 0) throw ValidationError("synthetic_blobs: n_per_class must be positive");
  if (spread < 0.0) throw ValidationError("synthetic_blobs: spread must be >= 0");
  Rng rng(seed);
  const std::size_t n = classes * n_per_class;
  Dataset ds{Tensor(Shape{n, dim}), std::vector<Label>(n), classes, split};
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const std::size_t row = c * n_per_class + k;
      ds.labels[row] = static_cast<Label>(c);
      for (std::size_t d = 0; d < dim; ++d) {
        const double mean = d < 64 ? static_cast<double>((c >> d) & 1U) : 0.0;
        const double v = spread == 0.0 ? mean : mean + spread * rng.normal();
        ds.features.at(row, d) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return ds;
}

Partition dirichlet_partition(std::span<const Label> labels, std::size_t num_clients, double alpha,
                              std::uint64_t seed) {
  if (num_clients == 0) throw ValidationError("dirichlet_partition: need at least one client");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("dirichlet_partition: alpha must be positive");
  if (num_clients > labels.size()) {
    throw ValidationError("dirichlet_partition: " + std::to_string(num_clients) + " clients for " +
                          std::to_string(labels.size()) + " samples");
  }
  Label top = 0;
  for (Label y : labels) {
    if (y < 0) throw ValidationError("dirichlet_partition: negative label");
    top = std::max(top, y);
  }
  const std::size_t classes = static_cast<std::size_t>(top) + 1;

  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);

  Rng rng(seed);
  Partition part{std::vector<std::vector<std::size_t>>(num_clients), alpha, seed};
  for (auto& members : by_class) {
    rng.shuffle(members);
    const std::vector<double> p = rng.dirichlet(alpha, num_clients);
    const double n = static_cast<double>(members.size());

    // Largest-remainder rounding; equal remainders favour the lower client id.
    std::vector<std::size_t> quota(num_clients);
    std::vector<std::pair<double, std::size_t>> remainder(num_clients);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < num_clients; ++i) {
      const double exact = p[i] * n;
      quota[i] = std::min(static_cast<std::size_t>(std::floor(exact)), members.size());
      remainder[i] = {exact - static_cast<double>(quota[i]), i};
      assigned += quota[i];
    }
    std::stable_sort(remainder.begin(), remainder.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < members.size(); r = (r + 1) % num_clients, ++assigned) {
      ++quota[remainder[r].second];
    }
    while (assigned > members.size()) {
      auto it = std::max_element(quota.begin(), quota.end());
      --*it;
      --assigned;
    }

    std::size_t cursor = 0;
    for (std::size_t i = 0; i < num_clients; ++i) {
      part.clients[i].insert(part.clients[i].end(), members.begin() + cursor, members.begin() + cursor + quota[i]);
      cursor += quota[i];
    }
  }

  // Every client needs at least one sample.
  for (std::size_t i = 0; i < num_clients; ++i) {
    while (part.clients[i].empty()) {
      auto largest = std::max_element(part.clients.begin(), part.clients.end(),
                                      [](const auto& a, const auto& b) { return a.size() < b.size(); });
      part.clients[i].push_back(largest->back());
      largest->pop_back();
    }
  }
  for (auto& c : part.clients) std::sort(c.begin(), c.end());
  return part;
}

std::vector<std::vector<std::size_t>> client_histograms(const Partition& p, std::span<const Label> labels,
                                                        std::size_t classes) {
  std::vector<std::vector<std::size_t>> h(p.num_clients(), std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < p.num_clients(); ++i)
    for (std::size_t idx : p.clients[i]) ++h[i][static_cast<std::size_t>(labels[idx])];
  return h;
}

double mean_tv_from_uniform(const Partition& p, std::span<const Label> labels, std::size_t classes) {
  const auto hist = client_histograms(p, labels, classes);
  double total = 0.0;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    const double n = static_cast<double>(p.clients[i].size());
    double tv = 0.0;
    for (std::size_t c = 0; c < classes; ++c) tv += std::abs(hist[i][c] / n - 1.0 / static_cast<double>(classes));
    total += 0.5 * tv;
  }
  return total / static_cast<double>(hist.size());
}

}  // namespace fedalc
