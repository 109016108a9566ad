#pragma once

// Reference computations used by the tests. The metric and SSIM oracles are
// plain loops over std::vector and share no code with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <torch/torch.h>

namespace oracle {

// Windowed SSIM on one (h, w) plane with an 11x11 Gaussian (sigma 1.5),
// zero padding outside the image, constants for dynamic range 2.
inline double ssim_plane(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  const int win = 11, half = 5;
  const double sigma = 1.5;
  std::vector<double> g(win);
  double total = 0.0;
  for (int k = 0; k < win; ++k) {
    g[k] = std::exp(-double((k - half) * (k - half)) / (2.0 * sigma * sigma));
    total += g[k];
  }
  for (auto& v : g) v /= total;
  const double c1 = (0.01 * 2.0) * (0.01 * 2.0), c2 = (0.03 * 2.0) * (0.03 * 2.0);
  double sum = 0.0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int u = 0; u < win; ++u) {
        for (int v = 0; v < win; ++v) {
          const int y = i + u - half, x = j + v - half;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          const double wt = g[u] * g[v];
          const double pa = a[y * w + x], pb = b[y * w + x];
          ma += wt * pa;
          mb += wt * pb;
          saa += wt * pa * pa;
          sbb += wt * pb * pb;
          sab += wt * pa * pb;
        }
      }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return sum / (h * w);
}

// Mean over batch and channels of a (b, c, h, w) double tensor pair.
inline double ssim(const torch::Tensor& a, const torch::Tensor& b) {
  auto ca = a.to(torch::kDouble).contiguous();
  auto cb = b.to(torch::kDouble).contiguous();
  const int n = static_cast<int>(ca.size(0)), c = static_cast<int>(ca.size(1));
  const int h = static_cast<int>(ca.size(2)), w = static_cast<int>(ca.size(3));
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) {
      auto pa = ca[i][k].reshape({-1});
      auto pb = cb[i][k].reshape({-1});
      std::vector<double> va(pa.data_ptr<double>(), pa.data_ptr<double>() + pa.numel());
      std::vector<double> vb(pb.data_ptr<double>(), pb.data_ptr<double>() + pb.numel());
      acc += ssim_plane(va, vb, h, w);
    }
  }
  return acc / (n * c);
}

// Pearson correlation from the textbook formula: covariance over the
// product of standard deviations.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (x[i] - mx) * (y[i] - my);
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
  }
  return (cov / n) / (std::sqrt(vx / n) * std::sqrt(vy / n));
}

// exp(mean_x KL(p(y|x) || p(y))) over one split, by brute force.
inline double inception_split(const std::vector<std::vector<double>>& p) {
  const std::size_t k = p.front().size();
  std::vector<double> marginal(k, 0.0);
  for (const auto& row : p)
    for (std::size_t j = 0; j < k; ++j) marginal[j] += row[j] / static_cast<double>(p.size());
  double kl = 0.0;
  for (const auto& row : p) {
    for (std::size_t j = 0; j < k; ++j) {
      if (row[j] > 0) kl += row[j] * (std::log(row[j]) - std::log(marginal[j]));
    }
  }
  return std::exp(kl / static_cast<double>(p.size()));
}

// Central finite differences of `f` with respect to selected flat entries
// of the (double, leaf) tensor `t`, which is perturbed in place.
inline std::vector<double> numeric_grad(const std::function<double()>& f, torch::Tensor t,
                                        const std::vector<int64_t>& flat_indices, double step = 1e-4) {
  torch::NoGradGuard guard;
  auto flat = t.view({-1});
  std::vector<double> out;
  for (auto i : flat_indices) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + step;
    const double up = f();
    flat[i] = orig - step;
    const double down = f();
    flat[i] = orig;
    out.push_back((up - down) / (2 * step));
  }
  return out;
}

// Gradients smaller than `floor` are compared on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

// Worst relative error between autograd and central differences of
// `loss(input)` over `count` random entries of `input` (double tensor).
inline double gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& loss, torch::Tensor input,
                             int count = 8, std::uint64_t seed = 0, double step = 1e-4) {
  input = input.detach().clone().to(torch::kDouble).requires_grad_(true);
  auto value = loss(input);
  auto grad = torch::autograd::grad({value}, {input})[0].reshape({-1});
  std::vector<int64_t> idx;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> pick(0, input.numel() - 1);
  for (int i = 0; i < count; ++i) idx.push_back(pick(rng));
  auto f = [&] { return loss(input).item<double>(); };
  auto numeric = numeric_grad(f, input, idx, step);
  double worst = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    worst = std::max(worst, relative_error(grad[idx[i]].item<double>(), numeric[i]));
  }
  return worst;
}

}  // namespace oracle
