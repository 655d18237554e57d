#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include "doctest.h"
#include "kgprop/error.hpp"
#include "kgprop/model.hpp"
#include "kgprop/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace kgprop;
using testutil::make_spec;
using testutil::make_store;
using testutil::set_row;

namespace {

// Uniform draws in [-1, 1] except rotation phases in [-pi, pi].
template <typename S>
void randomize(const ModelSpec& spec, EmbeddingStore<S>& store, Rng& rng) {
  for (auto& v : store.entities) v = static_cast<S>(rng.real(-1.0, 1.0));
  const double lo = spec.family == ModelFamily::RotatE ? -std::numbers::pi : -1.0;
  for (auto& v : store.relations) v = static_cast<S>(rng.real(lo, -lo));
}

std::vector<ModelSpec> family_specs() {
  return {
      make_spec(ModelFamily::TransE, 8, 1, NormOrder::L2),
      make_spec(ModelFamily::TransE, 8, 1, NormOrder::L1),
      make_spec(ModelFamily::DistMult, 8),
      make_spec(ModelFamily::RotatE, 8, 1, NormOrder::L2),
      make_spec(ModelFamily::RotatE, 8, 1, NormOrder::L1),
      make_spec(ModelFamily::OTE, 6, 1, NormOrder::L2, 2),
      make_spec(ModelFamily::OTE, 6, 1, NormOrder::L1, 2),
  };
}

}  // namespace

TEST_CASE("model spec validation enforces shape constraints") {
  CHECK(make_spec(ModelFamily::TransE, 8).validate().empty());
  CHECK_FALSE(make_spec(ModelFamily::TransE, 0).validate().empty());
  CHECK_FALSE(make_spec(ModelFamily::TransE, 8, -1).validate().empty());
  CHECK_FALSE(make_spec(ModelFamily::RotatE, 7).validate().empty());
  CHECK_FALSE(make_spec(ModelFamily::OTE, 8, 1, NormOrder::L2, 3).validate().empty());
  CHECK_FALSE(make_spec(ModelFamily::OTE, 8, 1, NormOrder::L2, 0).validate().empty());
  CHECK_THROWS_AS(make_spec(ModelFamily::RotatE, 7).require_valid(), ConfigError);
}

TEST_CASE("relation width depends on the family") {
  CHECK(make_spec(ModelFamily::TransE, 10).relation_width() == 10);
  CHECK(make_spec(ModelFamily::DistMult, 10).relation_width() == 10);
  CHECK(make_spec(ModelFamily::RotatE, 10).relation_width() == 5);
  // Two groups of size 5: per group a 5x5 matrix plus 5 log-scales.
  CHECK(make_spec(ModelFamily::OTE, 10, 1, NormOrder::L2, 2).relation_width() == 60);
  CHECK(make_spec(ModelFamily::OTE, 10, 1, NormOrder::L2, 2).group_size() == 5);
}

TEST_CASE("family and enum names round-trip") {
  for (auto f : {ModelFamily::TransE, ModelFamily::DistMult, ModelFamily::RotatE, ModelFamily::OTE})
    CHECK(family_from_string(to_string(f)) == f);
  CHECK_THROWS_AS(family_from_string("convkb"), ConfigError);
  CHECK(norm_from_string("l1") == NormOrder::L1);
}

TEST_CASE("score worked examples") {
  SUBCASE("translation hits the tail exactly") {
    const auto spec = make_spec(ModelFamily::TransE, 2);
    const std::vector<double> h{1, 0}, r{0, 1}, t{1, 1};
    CHECK(score<double>(spec, h, r, t) == 0.0);
  }
  SUBCASE("trilinear product of all-ones") {
    const auto spec = make_spec(ModelFamily::DistMult, 4);
    const std::vector<double> ones{1, 1, 1, 1};
    CHECK(score<double>(spec, ones, ones, ones) == 4.0);
  }
  SUBCASE("identity rotation of an equal pair") {
    const auto spec = make_spec(ModelFamily::RotatE, 2);
    const std::vector<double> h{0.5, 0.25}, r{0.0};
    CHECK(score<double>(spec, h, r, h) == 0.0);
  }
  SUBCASE("identity block transform of an equal pair") {
    const auto spec = make_spec(ModelFamily::OTE, 2, 1, NormOrder::L2, 1);
    const std::vector<double> h{0.3, -0.7};
    const std::vector<double> rel{1, 0, 0, 1, 0, 0};  // M = I, s = 0
    CHECK(score<double>(spec, h, rel, h) == 0.0);
  }
}

TEST_CASE("context worked examples") {
  SUBCASE("translation context adds the relation") {
    const auto spec = make_spec(ModelFamily::TransE, 2);
    const std::vector<double> h{1, 2}, r{3, 4};
    const auto out = head_context<double>(spec, h, r);
    CHECK(out == std::vector<double>{4, 6});
    CHECK(tail_context<double>(spec, out, r) == h);
  }
  SUBCASE("quarter rotation maps the real unit onto the imaginary unit") {
    const auto spec = make_spec(ModelFamily::RotatE, 2);
    const std::vector<double> h{1, 0}, r{std::numbers::pi / 2};
    const auto out = head_context<double>(spec, h, r);
    CHECK(std::fabs(out[0]) < 1e-12);
    CHECK(out[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("block context equals a dense scaled-orthogonal product") {
    const auto spec = make_spec(ModelFamily::OTE, 6, 1, NormOrder::L2, 2);
    Rng rng(31);
    std::vector<double> x(6), rel(spec.relation_width());
    for (auto& v : x) v = rng.real(-1, 1);
    for (auto& v : rel) v = rng.real(-1, 1);
    const auto fast = head_context<double>(spec, x, rel);
    const auto slow = oracle::head_context(spec, x, rel);
    for (int d = 0; d < 6; ++d) CHECK(fast[d] == doctest::Approx(slow[d]).epsilon(1e-10));
  }
}

TEST_CASE("tail context inverts head context") {
  Rng rng(17);
  auto residual = [&](const ModelSpec& spec, double tol) {
    std::vector<double> x(spec.dim), rel(spec.relation_width());
    for (int k = 0; k < 50; ++k) {
      for (auto& v : x) v = rng.real(-1, 1);
      const double lo = spec.family == ModelFamily::RotatE ? -std::numbers::pi : -1.0;
      for (auto& v : rel) v = rng.real(lo, -lo);
      const auto back = tail_context<double>(spec, head_context<double>(spec, x, rel), rel);
      for (int d = 0; d < spec.dim; ++d) CHECK(back[d] == doctest::Approx(x[d]).epsilon(tol));
    }
  };
  residual(make_spec(ModelFamily::TransE, 8), 1e-15);
  residual(make_spec(ModelFamily::RotatE, 8), 1e-12);
  residual(make_spec(ModelFamily::OTE, 6, 1, NormOrder::L2, 2), 1e-6);
}

TEST_CASE("scores agree with the independent formula oracle") {
  Rng rng(23);
  for (const ModelSpec& spec : family_specs()) {
    std::vector<double> h(spec.dim), t(spec.dim), rel(spec.relation_width());
    for (int k = 0; k < 40; ++k) {
      for (auto& v : h) v = rng.real(-1, 1);
      for (auto& v : t) v = rng.real(-1, 1);
      const double lo = spec.family == ModelFamily::RotatE ? -std::numbers::pi : -1.0;
      for (auto& v : rel) v = rng.real(lo, -lo);
      const double fast = score<double>(spec, h, rel, t);
      const double slow = oracle::score(spec, h, rel, t);
      CHECK(fast == doctest::Approx(slow).epsilon(1e-10));
    }
  }
}

TEST_CASE("cached scoring is bitwise identical to one-shot scoring") {
  Rng rng(29);
  for (const ModelSpec& spec : family_specs()) {
    auto store = make_store<double>(spec, 4, 2);
    randomize(spec, store, rng);
    const auto cache = build_relation_cache(spec, store);
    for (RelationId r = 0; r < 2; ++r) {
      for (EntityId a = 0; a < 4; ++a) {
        for (EntityId b = 0; b < 4; ++b) {
          const double cached =
              score_cached<double>(spec, cache, r, store.entity(a), store.entity(b));
          const double oneshot = score<double>(spec, store.entity(a), store.relation(r), store.entity(b));
          CHECK(cached == oneshot);
        }
      }
    }
  }
}

TEST_CASE("trilinear scores are symmetric in head and tail") {
  const auto spec = make_spec(ModelFamily::DistMult, 8);
  Rng rng(37);
  std::vector<double> h(8), t(8), rel(8);
  for (int k = 0; k < 100; ++k) {
    for (auto& v : h) v = rng.real(-1, 1);
    for (auto& v : t) v = rng.real(-1, 1);
    for (auto& v : rel) v = rng.real(-1, 1);
    CHECK(score<double>(spec, h, rel, t) == score<double>(spec, t, rel, h));
  }
}

TEST_CASE("orthogonalization worked examples") {
  SUBCASE("identity stays identity") {
    const std::vector<double> eye{1, 0, 0, 1};
    CHECK(gram_schmidt(eye, 2) == eye);
  }
  SUBCASE("shear reduces to identity") {
    const std::vector<double> shear{1, 1, 0, 1};  // columns (1,0) and (1,1)
    const auto q = gram_schmidt(shear, 2);
    CHECK(q[0] == doctest::Approx(1));
    CHECK(q[1] == doctest::Approx(0));
    CHECK(q[2] == doctest::Approx(0));
    CHECK(q[3] == doctest::Approx(1));
  }
  SUBCASE("orthogonal input is a fixpoint") {
    const double c = std::cos(0.4), s = std::sin(0.4);
    const std::vector<double> rot{c, -s, s, c};
    const auto q = gram_schmidt(rot, 2);
    for (int i = 0; i < 4; ++i) CHECK(q[i] == doctest::Approx(rot[i]).epsilon(1e-12));
  }
}

TEST_CASE("orthogonalization produces orthonormal columns on random input") {
  Rng rng(41);
  for (int k = 0; k < 30; ++k) {
    std::vector<double> m(64);
    for (auto& v : m) v = rng.real(-1, 1);
    const auto q = gram_schmidt(m, 8);
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        double dot = 0;
        for (int a = 0; a < 8; ++a) dot += q[a * 8 + i] * q[a * 8 + j];
        CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("degenerate columns trigger the seeded perturbation rescue") {
  // Second column is a multiple of the first.
  const std::vector<double> m{1, 2, 0.5, 2, 4, -0.25, -1, -2, 0.75};
  const auto tape = gram_schmidt_forward(m, 3);
  CHECK(tape.perturbed);
  for (int j = 0; j < 3; ++j) {
    double nrm = 0;
    for (int a = 0; a < 3; ++a) nrm += tape.q[a * 3 + j] * tape.q[a * 3 + j];
    CHECK(nrm == doctest::Approx(1.0).epsilon(1e-9));
  }
  // The tape's input column reproduction must use the perturbed matrix.
  for (int j = 0; j < 3; ++j) {
    for (int a = 0; a < 3; ++a) {
      double rebuilt = tape.vnorm[j] * tape.q[a * 3 + j];
      for (int i = 0; i < j; ++i) rebuilt += tape.coef[i * 3 + j] * tape.q[a * 3 + i];
      CHECK(rebuilt == doctest::Approx(tape.input[a * 3 + j]).epsilon(1e-9));
    }
  }
}

TEST_CASE("orthogonalization reverse pass matches finite differences") {
  Rng rng(43);
  const int g = 4;
  std::vector<double> m(g * g), w(g * g);
  for (auto& v : m) v = rng.real(-1, 1);
  for (auto& v : w) v = rng.real(-1, 1);
  // Scalar probe f(M) = sum w .* gram_schmidt(M).
  auto f = [&](std::span<const double> mm) {
    const auto q = gram_schmidt(mm, g);
    double acc = 0;
    for (int i = 0; i < g * g; ++i) acc += w[i] * q[i];
    return acc;
  };
  const auto tape = gram_schmidt_forward(m, g);
  REQUIRE_FALSE(tape.perturbed);
  const auto dm = gram_schmidt_backward(tape, w);
  for (int i = 0; i < g * g; ++i) {
    const double fd = oracle::central_difference(f, m, static_cast<size_t>(i));
    CHECK(dm[i] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("initialization respects the documented ranges and is seeded") {
  const auto spec = make_spec(ModelFamily::RotatE, 16);
  const auto a = init_embeddings<double>(spec, 20, 3, 99);
  const auto b = init_embeddings<double>(spec, 20, 3, 99);
  const auto c = init_embeddings<double>(spec, 20, 3, 100);
  CHECK(a.entities == b.entities);
  CHECK(a.relations == b.relations);
  CHECK(a.entities != c.entities);
  const double bound = 6.0 / std::sqrt(16.0);
  for (double v : a.entities) CHECK(std::fabs(v) <= bound);
  for (double v : a.relations) CHECK(std::fabs(v) <= std::numbers::pi);

  const auto ote = make_spec(ModelFamily::OTE, 6, 1, NormOrder::L2, 2);
  const auto s = init_embeddings<double>(ote, 4, 2, 1);
  for (RelationId r = 0; r < 2; ++r) {
    const auto row = s.relation(r);
    for (int grp = 0; grp < 2; ++grp) {
      const size_t base = static_cast<size_t>(grp) * 12;
      for (int i = 0; i < 9; ++i) CHECK(std::fabs(row[base + i]) <= 0.1);
      for (int i = 9; i < 12; ++i) CHECK(row[base + i] == 0.0);  // log-scales start neutral
    }
  }
}

TEST_CASE("relation cache honours the stored-parameter invariants") {
  Rng rng(47);
  SUBCASE("rotation factors have unit modulus") {
    const auto spec = make_spec(ModelFamily::RotatE, 8);
    auto store = make_store<float>(spec, 2, 3);
    randomize(spec, store, rng);
    const auto cache = build_relation_cache(spec, store);
    for (RelationId r = 0; r < 3; ++r) {
      const auto c = cache.cosines(r), s = cache.sines(r);
      for (int k = 0; k < 4; ++k) {
        CHECK(double(c[k]) * c[k] + double(s[k]) * s[k] == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
  SUBCASE("orthogonalized blocks satisfy transpose-inverse within 1e-6") {
    const auto spec = make_spec(ModelFamily::OTE, 8, 1, NormOrder::L2, 2);
    auto store = make_store<float>(spec, 2, 3);
    randomize(spec, store, rng);
    const auto cache = build_relation_cache(spec, store);
    const int g = spec.group_size();
    for (RelationId r = 0; r < 3; ++r) {
      for (int grp = 0; grp < 2; ++grp) {
        const auto q = cache.block(r, grp);
        for (int i = 0; i < g; ++i) {
          for (int j = 0; j < g; ++j) {
            double dot = 0;
            for (int a = 0; a < g; ++a) dot += double(q[a * g + i]) * q[a * g + j];
            CHECK(std::fabs(dot - (i == j ? 1.0 : 0.0)) < 1e-6);
          }
        }
      }
    }
  }
  SUBCASE("log-scales are clamped before exponentiation") {
    CHECK(clamp_log_scale(25.0) == 10.0);
    CHECK(clamp_log_scale(-25.0) == -10.0);
    CHECK(clamp_log_scale(0.5) == 0.5);
    const auto spec = make_spec(ModelFamily::OTE, 2, 1, NormOrder::L2, 1);
    auto store = make_store<double>(spec, 2, 1);
    auto rel = store.relation(0);
    set_row(rel, {1, 0, 0, 1, 300, -300});
    const auto cache = build_relation_cache(spec, store);
    CHECK(cache.scales(0)[0] == std::exp(10.0));
    CHECK(cache.inv_scales(0)[1] == std::exp(10.0));
    CHECK(store.all_finite());
  }
}

TEST_CASE("analytic score gradients match central differences at safe points") {
  Rng rng(53);
  for (const ModelSpec& spec : family_specs()) {
    const int n = spec.dim;
    std::vector<double> h(n), t(n), rel(spec.relation_width());
    for (auto& v : h) v = rng.real(0.25, 1.0);  // keep |u| away from kinks
    for (auto& v : t) v = rng.real(-1.0, -0.25);
    const double lo = spec.family == ModelFamily::RotatE ? -std::numbers::pi : -1.0;
    for (auto& v : rel) v = rng.real(lo, -lo);
    std::vector<double> dh(n), dt(n), drel(spec.relation_width());
    const auto tapes = spec.family == ModelFamily::OTE
                           ? ote_tapes(spec, std::span<const double>(rel))
                           : std::vector<GramSchmidtTape>{};
    const double s = score_and_grad<double>(spec, h, t, rel, tapes.empty() ? nullptr : tapes.data(),
                                            dh, dt, drel);
    CHECK(s == doctest::Approx(score<double>(spec, h, rel, t)).epsilon(1e-9));
    auto fh = [&](std::span<const double> hh) { return score<double>(spec, hh, rel, t); };
    auto ft = [&](std::span<const double> tt) { return score<double>(spec, h, rel, tt); };
    for (int d = 0; d < n; ++d) {
      const double fdh = oracle::central_difference(fh, h, static_cast<size_t>(d));
      const double fdt = oracle::central_difference(ft, t, static_cast<size_t>(d));
      CHECK(dh[d] == doctest::Approx(fdh).epsilon(2e-4));
      CHECK(dt[d] == doctest::Approx(fdt).epsilon(2e-4));
    }
  }
}

TEST_CASE("non-finite parameters are detected") {
  const auto spec = make_spec(ModelFamily::TransE, 4);
  auto store = make_store<float>(spec, 2, 1);
  CHECK(store.all_finite());
  store.entities[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(store.all_finite());
}
