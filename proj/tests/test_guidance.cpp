#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "reshape/error.hpp"
#include "reshape/guidance.hpp"
#include "reshape/rng.hpp"

using namespace reshape;

namespace {

// Independent oracle: evaluate every pixel against every point directly.
Tensor gaussian_oracle(const Keypoints& kp, int H, int W, double sigma) {
  Tensor map({1, H, W});
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double best = 0.0;
      for (const auto& p : kp.points) {
        const double dr = r - p[0], dc = c - p[1];
        best = std::max(best, std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma)));
      }
      map.at(0, r, c) = static_cast<float>(std::min(best, 1.0));
    }
  return map;
}

}  // namespace

TEST_CASE("rasterize: single point with zero blur is an impulse") {
  Keypoints kp;
  kp.points = {{2.0, 2.0}};
  ShapeGuidance g = rasterize(kp, 5, 5, 0.0);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c)
      CHECK(g.map.at(0, r, c) == (r == 2 && c == 2 ? 1.0f : 0.0f));
}

TEST_CASE("rasterize: empty keypoints give an all-zero map") {
  Keypoints kp;
  ShapeGuidance g = rasterize(kp, 8, 8, 1.0);
  for (int64_t i = 0; i < g.map.size(); ++i) CHECK(g.map[i] == 0.0f);
}

TEST_CASE("rasterize: two points match the per-pixel Gaussian oracle") {
  Keypoints kp;
  kp.points = {{4.5, 6.25}, {11.0, 3.75}};
  ShapeGuidance g = rasterize(kp, 16, 16, 1.0);
  Tensor oracle = gaussian_oracle(kp, 16, 16, 1.0);
  for (int64_t i = 0; i < g.map.size(); ++i) {
    // The implementation only rasterizes a 4-sigma window; outside it the
    // oracle value is below 3.4e-4 while the map holds an exact zero.
    if (g.map[i] == 0.0f)
      CHECK(oracle[i] < 4e-4f);
    else
      CHECK(g.map[i] == doctest::Approx(oracle[i]).epsilon(1e-6));
  }
}

TEST_CASE("rasterize: values stay in [0,1] and the call is deterministic") {
  Keypoints kp;
  Rng rng(7);
  for (int i = 0; i < 12; ++i)
    kp.points.push_back({rng.uniform(0, 31), rng.uniform(0, 31)});
  kp.edges = {{0, 1}, {2, 3}, {4, 5}};
  ShapeGuidance a = rasterize(kp, 32, 32, 2.0);
  ShapeGuidance b = rasterize(kp, 32, 32, 2.0);
  for (int64_t i = 0; i < a.map.size(); ++i) {
    CHECK(a.map[i] >= 0.0f);
    CHECK(a.map[i] <= 1.0f);
    CHECK(a.map[i] == b.map[i]);
  }
}

TEST_CASE("rasterize: integer translation shifts the map bit-exactly") {
  Keypoints kp;
  kp.points = {{10.3, 11.8}, {14.1, 9.4}};
  kp.edges = {{0, 1}};
  const double blur = 1.5;
  ShapeGuidance a = rasterize(kp, 32, 32, blur);
  Keypoints moved = kp;
  const int dr = 3, dc = -2;
  for (auto& p : moved.points) {
    p[0] += dr;
    p[1] += dc;
  }
  ShapeGuidance b = rasterize(moved, 32, 32, blur);
  // Compare on the interior where no bump mass crosses the border.
  for (int r = 8; r < 24; ++r)
    for (int c = 8; c < 24; ++c)
      CHECK(a.map.at(0, r, c) == b.map.at(0, r + dr, c + dc));
}

TEST_CASE("rasterize: error paths") {
  Keypoints bad_edge;
  bad_edge.points = {{1.0, 1.0}};
  bad_edge.edges = {{0, 3}};
  CHECK_THROWS_AS(rasterize(bad_edge, 16, 16, 1.0), GeometryError);

  Keypoints nan_pt;
  nan_pt.points = {{std::nan(""), 1.0}};
  CHECK_THROWS_AS(rasterize(nan_pt, 16, 16, 1.0), GeometryError);

  Keypoints ok;
  ok.points = {{1.0, 1.0}};
  CHECK_THROWS_AS(rasterize(ok, 0, 4, 1.0), ShapeError);
}

TEST_CASE("rasterize: per-group rendering puts points in their own channels") {
  Keypoints kp;
  kp.points = {{4.0, 4.0}, {10.0, 10.0}, {4.0, 10.0}};
  RasterizeOptions opts;
  opts.blur_width = 1.0;
  opts.groups = {{0, 1}, {2}};
  ShapeGuidance g = rasterize(kp, 16, 16, opts);
  CHECK(g.map.dim(0) == 2);
  CHECK(g.map.at(0, 4, 4) == doctest::Approx(1.0));
  CHECK(g.map.at(1, 4, 10) == doctest::Approx(1.0));
  CHECK(g.map.at(1, 4, 4) < 0.01f);
}

TEST_CASE("condition: concatenates image and guidance channels") {
  Tensor img({3, 8, 8});
  Rng rng(3);
  for (int64_t i = 0; i < img.size(); ++i)
    img[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  Keypoints kp;
  kp.points = {{4.0, 4.0}};
  ShapeGuidance g = rasterize(kp, 8, 8, 1.0);

  Tensor out = condition(img, g);
  CHECK(out.dim(0) == 4);
  CHECK(out.dim(1) == 8);
  CHECK(out.dim(2) == 8);
  // Slicing channels 0..C recovers the image exactly.
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 8; ++r)
      for (int w = 0; w < 8; ++w) CHECK(out.at(c, r, w) == img.at(c, r, w));
  for (int r = 0; r < 8; ++r)
    for (int w = 0; w < 8; ++w) CHECK(out.at(3, r, w) == g.map.at(0, r, w));

  // All-zero guidance stays zero after conditioning.
  ShapeGuidance zero;
  zero.map = Tensor({1, 8, 8});
  Tensor out2 = condition(img, zero);
  for (int r = 0; r < 8; ++r)
    for (int w = 0; w < 8; ++w) CHECK(out2.at(3, r, w) == 0.0f);
}

TEST_CASE("condition: shape mismatch throws") {
  Tensor img({3, 8, 8});
  ShapeGuidance g;
  g.map = Tensor({1, 16, 16});
  CHECK_THROWS_AS(condition(img, g), ShapeError);
}

TEST_CASE("keypoints: JSON round trip") {
  Keypoints kp;
  kp.points = {{1.25, 2.5}, {3.0, 4.75}};
  kp.edges = {{0, 1}};
  const std::string path = "kp_roundtrip_test.json";
  save_keypoints(path, kp);
  Keypoints back = load_keypoints(path);
  REQUIRE(back.points.size() == 2);
  CHECK(back.points[0][0] == 1.25);
  CHECK(back.points[1][1] == 4.75);
  REQUIRE(back.edges.size() == 1);
  CHECK(back.edges[0][0] == 0);
  std::remove(path.c_str());
}
