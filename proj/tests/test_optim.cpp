#include "doctest.h"

#include <cmath>
#include <limits>

#include "pmil/optim.hpp"
#include "pmil/errors.hpp"

using namespace pmil;

TEST_SUITE("optim") {

TEST_CASE("first adam step moves by about lr") {
  Tensor p = Tensor::scalar_tensor(1.0);
  Optimizer opt(OptimKind::AdamW, 0.0);
  opt.step_one("p", p, Tensor::scalar_tensor(1.0), 0.1);
  CHECK(p.scalar() == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(opt.step_count(p) == 1);
}

TEST_CASE("adamw with zero gradient shrinks multiplicatively") {
  Tensor p = Tensor::scalar_tensor(2.0);
  Optimizer opt(OptimKind::AdamW, 0.5);
  opt.step_one("p", p, Tensor::scalar_tensor(0.0), 0.1);
  CHECK(p.scalar() == 2.0 * (1.0 - 0.1 * 0.5));
}

TEST_CASE("100 steps on a quadratic match a transcribed reference trace") {
  // minimize 0.5 * a * p^2, gradient a * p
  const double a = 3.0, lr = 0.05, wd = 0.01;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (OptimKind kind : {OptimKind::Adam, OptimKind::AdamW}) {
    Tensor p = Tensor::scalar_tensor(1.5);
    Optimizer opt(kind, wd);

    // independent transcription of the published update equations
    double pr = 1.5, m = 0, v = 0;
    for (int t = 1; t <= 100; ++t) {
      opt.step_one("p", p, Tensor::scalar_tensor(a * p.scalar()), lr);

      double g = a * pr;
      if (kind == OptimKind::Adam) g += wd * pr;
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      if (kind == OptimKind::AdamW) pr -= lr * wd * pr;
      pr -= lr * mhat / (std::sqrt(vhat) + eps);

      CHECK(std::abs(p.scalar() - pr) <= 1e-12 * (std::abs(pr) + 1.0));
    }
  }
}

TEST_CASE("non-finite gradient raises a numeric error naming the parameter") {
  Tensor p = Tensor::scalar_tensor(1.0);
  Optimizer opt(OptimKind::Adam, 0.0);
  Tensor bad = Tensor::scalar_tensor(std::numeric_limits<double>::quiet_NaN());
  try {
    opt.step_one("head.cls.w", p, bad, 0.1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("head.cls.w") != std::string::npos);
  }
}

TEST_CASE("cosine schedule endpoints and midpoint") {
  CosineSchedule s{1e-3, 1e-5, 10};
  CHECK(cosine_lr(0, s) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(cosine_lr(10, s) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(cosine_lr(5, s) == doctest::Approx((1e-3 + 1e-5) / 2).epsilon(1e-12));
  CHECK(cosine_lr(17, s) == 1e-5);  // past t_max clamps
  CHECK_THROWS_AS(cosine_lr(-1, s), std::invalid_argument);
}

}  // TEST_SUITE
