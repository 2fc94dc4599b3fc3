#include "d2s/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "d2s/model.hpp"
#include "d2s/ops.hpp"

namespace d2s {

namespace {

constexpr double kEps = 1e-4;

using DTensor = TensorT<double>;

DTensor random_tensor(const Shape4& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  DTensor t(shape);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero; safe for relu kinks under +-eps probing.
DTensor random_tensor_nonzero(const Shape4& shape, Rng& rng) {
  DTensor t(shape);
  for (auto& v : t.data) {
    const double mag = rng.uniform(0.01, 1.0);
    v = rng.below(2) == 0 ? mag : -mag;
  }
  return t;
}

// A random permutation of well-separated values; every 2x2 window has a
// unique argmax with a gap far above the probe step.
DTensor random_tensor_distinct(const Shape4& shape, Rng& rng) {
  DTensor t(shape);
  const size_t n = t.data.size();
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), size_t{0});
  for (size_t i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.below(static_cast<uint64_t>(i + 1))]);
  const double spacing = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < n; ++i)
    t.data[i] = (static_cast<double>(perm[i]) + 0.5) * spacing +
                rng.uniform(-0.2, 0.2) * spacing;
  return t;
}

double weighted_sum(const DTensor& t, const DTensor& probe) {
  double s = 0.0;
  for (size_t i = 0; i < t.data.size(); ++i) s += t.data[i] * probe.data[i];
  return s;
}

struct Suite {
  Rng rng;
  int cases;
  std::vector<GradCheckResult> results;

  Suite(uint64_t seed, int cases_per_op) : rng(seed), cases(cases_per_op) {}

  void record(const std::string& op, double err) {
    for (auto& r : results) {
      if (r.op == op) {
        r.max_rel_err = std::max(r.max_rel_err, err);
        r.cases += 1;
        return;
      }
    }
    results.push_back({op, 1, err});
  }

  Shape4 small_shape(int64_t max_side = 6) {
    return Shape4{1 + static_cast<int64_t>(rng.below(2)),
                  1 + static_cast<int64_t>(rng.below(3)),
                  1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_side))),
                  1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(max_side)))};
  }

  void check_conv() {
    for (int c = 0; c < cases; ++c) {
      const int k = rng.below(2) == 0 ? 1 : 3;
      const int pad = k == 3 ? static_cast<int>(rng.below(2)) : 0;
      const int64_t cin = 1 + static_cast<int64_t>(rng.below(3));
      const int64_t cout = 1 + static_cast<int64_t>(rng.below(3));
      const int64_t n = 1 + static_cast<int64_t>(rng.below(2));
      int stride = 1 + static_cast<int>(rng.below(2));
      int64_t h = static_cast<int64_t>(k) + rng.below(4);
      int64_t w = static_cast<int64_t>(k) + rng.below(4);
      h -= (h + 2 * pad - k) % stride;
      w -= (w + 2 * pad - k) % stride;
      const DTensor x = random_tensor({n, cin, h, w}, rng);
      const DTensor weight = random_tensor({cout, cin, k, k}, rng);
      const DTensor bias = random_tensor({cout, 1, 1, 1}, rng);
      const Shape4 out_shape = conv2d_output_shape(x.shape, weight.shape, stride, pad);
      const DTensor probe = random_tensor(out_shape, rng);

      const auto grads = conv2d_backward(x, weight, stride, pad, probe);
      const DTensor fd_x = finite_diff_grad(
          [&](const DTensor& xt) {
            return weighted_sum(conv2d_forward(xt, weight, bias, stride, pad), probe);
          },
          x, kEps);
      const DTensor fd_w = finite_diff_grad(
          [&](const DTensor& wt) {
            return weighted_sum(conv2d_forward(x, wt, bias, stride, pad), probe);
          },
          weight, kEps);
      const DTensor fd_b = finite_diff_grad(
          [&](const DTensor& bt) {
            return weighted_sum(conv2d_forward(x, weight, bt, stride, pad), probe);
          },
          bias, kEps);
      record("conv2d", std::max({max_rel_error(grads.x, fd_x),
                                 max_rel_error(grads.weight, fd_w),
                                 max_rel_error(grads.bias, fd_b)}));
    }
  }

  void check_batchnorm() {
    for (int c = 0; c < 2 * cases; ++c) {
      Shape4 shape = small_shape();
      if (shape.n * shape.h * shape.w < 2) shape.n += 1;
      const Mode mode = c < cases ? Mode::train : Mode::eval;
      const DTensor x = random_tensor(shape, rng);
      const DTensor gamma = random_tensor({shape.c, 1, 1, 1}, rng, 0.5, 1.5);
      const DTensor beta = random_tensor({shape.c, 1, 1, 1}, rng);
      const DTensor rmean = random_tensor({shape.c, 1, 1, 1}, rng, -0.5, 0.5);
      const DTensor rvar = random_tensor({shape.c, 1, 1, 1}, rng, 0.5, 1.5);
      const DTensor probe = random_tensor(shape, rng);
      const double eps = 1e-5, momentum = 0.1;

      auto fwd = [&](const DTensor& xt, const DTensor& gt, const DTensor& bt) {
        DTensor rm = rmean, rv = rvar;  // running stats are scratch per call
        BNCache<double> cache;
        return batchnorm_forward(xt, gt, bt, rm, rv, eps, momentum, mode, cache);
      };
      BNCache<double> cache;
      DTensor rm = rmean, rv = rvar;
      batchnorm_forward(x, gamma, beta, rm, rv, eps, momentum, mode, cache);
      const auto grads = batchnorm_backward(x, gamma, cache, probe);

      const DTensor fd_x = finite_diff_grad(
          [&](const DTensor& xt) { return weighted_sum(fwd(xt, gamma, beta), probe); }, x,
          kEps);
      const DTensor fd_g = finite_diff_grad(
          [&](const DTensor& gt) { return weighted_sum(fwd(x, gt, beta), probe); }, gamma,
          kEps);
      const DTensor fd_b = finite_diff_grad(
          [&](const DTensor& bt) { return weighted_sum(fwd(x, gamma, bt), probe); }, beta,
          kEps);
      record(mode == Mode::train ? "batchnorm_train" : "batchnorm_eval",
             std::max({max_rel_error(grads.x, fd_x), max_rel_error(grads.gamma, fd_g),
                       max_rel_error(grads.beta, fd_b)}));
    }
  }

  void check_relu() {
    for (int c = 0; c < cases; ++c) {
      const DTensor x = random_tensor_nonzero(small_shape(), rng);
      const DTensor probe = random_tensor(x.shape, rng);
      const DTensor analytic = relu_backward(x, probe);
      const DTensor fd = finite_diff_grad(
          [&](const DTensor& xt) { return weighted_sum(relu(xt), probe); }, x, kEps);
      record("relu", max_rel_error(analytic, fd));
    }
  }

  void check_maxpool() {
    for (int c = 0; c < cases; ++c) {
      Shape4 shape = small_shape();
      shape.h = 2 * (1 + static_cast<int64_t>(rng.below(3)));
      shape.w = 2 * (1 + static_cast<int64_t>(rng.below(3)));
      const DTensor x = random_tensor_distinct(shape, rng);
      auto pooled = maxpool2d_forward(x);
      const DTensor probe = random_tensor(pooled.first.shape, rng);
      const DTensor analytic = maxpool2d_backward(pooled.second, probe);
      const DTensor fd = finite_diff_grad(
          [&](const DTensor& xt) {
            return weighted_sum(maxpool2d_forward(xt).first, probe);
          },
          x, kEps);
      record("maxpool2d", max_rel_error(analytic, fd));
    }
  }

  void check_maxunpool() {
    for (int c = 0; c < cases; ++c) {
      Shape4 shape = small_shape();
      shape.h = 2 * (1 + static_cast<int64_t>(rng.below(3)));
      shape.w = 2 * (1 + static_cast<int64_t>(rng.below(3)));
      const DTensor source = random_tensor_distinct(shape, rng);
      const PoolIndices indices = maxpool2d_forward(source).second;
      const DTensor y = random_tensor(indices.shape, rng);
      const DTensor probe = random_tensor(shape, rng);
      const DTensor analytic = maxunpool2d_backward(indices, probe);
      const DTensor fd = finite_diff_grad(
          [&](const DTensor& yt) {
            return weighted_sum(maxunpool2d(yt, indices, shape), probe);
          },
          y, kEps);
      record("maxunpool2d", max_rel_error(analytic, fd));
    }
  }

  void check_dropout() {
    for (int c = 0; c < cases; ++c) {
      const DTensor x = random_tensor(small_shape(), rng);
      const DTensor probe = random_tensor(x.shape, rng);
      const double p = rng.uniform(0.1, 0.7);
      const uint64_t mask_seed = rng.next_u64();
      auto fwd = [&](const DTensor& xt) {
        Rng local(mask_seed);  // same mask on every evaluation
        std::vector<double> mask;
        return dropout2d_forward(xt, p, Mode::train, &local, mask);
      };
      Rng local(mask_seed);
      std::vector<double> mask;
      dropout2d_forward(x, p, Mode::train, &local, mask);
      const DTensor analytic = dropout2d_backward(mask, probe);
      const DTensor fd = finite_diff_grad(
          [&](const DTensor& xt) { return weighted_sum(fwd(xt), probe); }, x, kEps);
      record("dropout2d", max_rel_error(analytic, fd));
    }
  }

  void check_d2s() {
    for (int c = 0; c < cases; ++c) {
      const int r = rng.below(2) == 0 ? 1 : 2;
      Shape4 shape = small_shape();
      shape.c *= static_cast<int64_t>(r) * r;
      const DTensor x = random_tensor(shape, rng);
      const DTensor out = depth_to_space(x, r);
      const DTensor probe = random_tensor(out.shape, rng);
      const DTensor analytic = space_to_depth(probe, r);
      const DTensor fd = finite_diff_grad(
          [&](const DTensor& xt) { return weighted_sum(depth_to_space(xt, r), probe); },
          x, kEps);
      record("depth_to_space", max_rel_error(analytic, fd));

      const DTensor probe2 = random_tensor(shape, rng);
      const DTensor analytic2 = depth_to_space(probe2, r);
      const DTensor fd2 = finite_diff_grad(
          [&](const DTensor& ot) { return weighted_sum(space_to_depth(ot, r), probe2); },
          out, kEps);
      record("space_to_depth", max_rel_error(analytic2, fd2));
    }
  }

  void check_add() {
    for (int c = 0; c < cases; ++c) {
      const DTensor a = random_tensor(small_shape(), rng);
      const DTensor b = random_tensor(a.shape, rng);
      const DTensor probe = random_tensor(a.shape, rng);
      DTensor ga(a.shape), gb(a.shape);
      elementwise_add_backward(probe, ga, gb);
      const DTensor fd_a = finite_diff_grad(
          [&](const DTensor& at) { return weighted_sum(elementwise_add(at, b), probe); },
          a, kEps);
      const DTensor fd_b = finite_diff_grad(
          [&](const DTensor& bt) { return weighted_sum(elementwise_add(a, bt), probe); },
          b, kEps);
      record("elementwise_add",
             std::max(max_rel_error(ga, fd_a), max_rel_error(gb, fd_b)));
    }
  }

  void check_loss() {
    for (int c = 0; c < cases; ++c) {
      Shape4 shape = small_shape();
      shape.c = 2;
      const DTensor logits = random_tensor(shape, rng, -2.0, 2.0);
      DTensor target(Shape4{shape.n, 1, shape.h, shape.w});
      for (auto& v : target.data) v = static_cast<double>(rng.below(2));
      const double w0 = rng.uniform(0.5, 2.0), w1 = rng.uniform(0.5, 3.0);
      const auto loss = softmax_ce_loss(logits, target, w0, w1);
      const DTensor fd = finite_diff_grad(
          [&](const DTensor& lt) { return softmax_ce_loss(lt, target, w0, w1).value; },
          logits, kEps);
      record("softmax_ce_loss", max_rel_error(loss.grad_logits, fd));
    }
  }

  // Loss gradient through the whole reduced model (r = 4, dropout off),
  // probed on a random subset of one random parameter tensor per case.
  void check_end_to_end() {
    Rng build_rng(rng.next_u64());
    BuildConfig cfg;
    cfg.dropout_p = 0.0f;
    ModelGraphT<double> model = build_vgg_micro_d2s<double>(cfg, build_rng);

    std::vector<int> trainable_ids;
    for (size_t i = 0; i < model.params.size(); ++i)
      if (model.trainable[i]) trainable_ids.push_back(static_cast<int>(i));

    const DTensor x = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
    DTensor target(Shape4{1, 1, 16, 16});
    for (auto& v : target.data) v = static_cast<double>(rng.below(2));

    auto loss_value = [&](ModelGraphT<double>& m) {
      const DTensor logits = m.forward(x, Mode::train);
      return softmax_ce_loss(logits, target, 1.0, 3.0).value;
    };

    for (int c = 0; c < cases; ++c) {
      const int pid = trainable_ids[rng.below(trainable_ids.size())];
      model.zero_grads();
      {
        const DTensor logits = model.forward(x, Mode::train);
        const auto loss = softmax_ce_loss(logits, target, 1.0, 3.0);
        model.backward(loss.grad_logits);
      }
      const DTensor& analytic = model.grads[static_cast<size_t>(pid)];
      const size_t numel = model.params[static_cast<size_t>(pid)].data.size();
      const size_t probes = std::min<size_t>(numel, 24);

      double worst = 0.0;
      for (size_t s = 0; s < probes; ++s) {
        const size_t j = rng.below(numel);
        ModelGraphT<double> scratch = model;
        double& slot = scratch.params[static_cast<size_t>(pid)].data[j];
        const double saved = slot;
        slot = saved + kEps;
        const double fp = loss_value(scratch);
        slot = saved - kEps;
        const double fm = loss_value(scratch);
        const double fd = (fp - fm) / (2 * kEps);
        const double a = analytic.data[j];
        worst = std::max(worst, std::abs(a - fd) /
                                    std::max({std::abs(a), std::abs(fd), 1e-6}));
      }
      record("model_end_to_end", worst);
    }
  }
};

}  // namespace

double max_rel_error(const TensorT<double>& analytic, const TensorT<double>& numeric) {
  if (!(analytic.shape == numeric.shape))
    throw ShapeError("max_rel_error: shape mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < analytic.data.size(); ++i) {
    const double a = analytic.data[i], b = numeric.data[i];
    worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}));
  }
  return worst;
}

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, int cases_per_op) {
  if (cases_per_op < 1) throw ValueError("run_gradcheck_suite: cases must be >= 1");
  Suite suite(seed, cases_per_op);
  suite.check_conv();
  suite.check_batchnorm();
  suite.check_relu();
  suite.check_maxpool();
  suite.check_maxunpool();
  suite.check_dropout();
  suite.check_d2s();
  suite.check_add();
  suite.check_loss();
  suite.check_end_to_end();
  return suite.results;
}

bool gradcheck_passed(const std::vector<GradCheckResult>& results, double tol) {
  for (const auto& r : results)
    if (!(r.max_rel_err <= tol)) return false;
  return !results.empty();
}

std::string format_gradcheck(const std::vector<GradCheckResult>& results) {
  std::string out;
  char line[128];
  for (const auto& r : results) {
    std::snprintf(line, sizeof(line), "op %s cases %d max_rel_err %.3e\n", r.op.c_str(),
                  r.cases, r.max_rel_err);
    out += line;
  }
  return out;
}

}  // namespace d2s
