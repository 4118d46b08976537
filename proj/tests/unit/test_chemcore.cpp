#include <gtest/gtest.h>

#include <sstream>

#include "molrl/chemcore.hpp"
#include "testing.hpp"

using namespace molrl;
using molrl::testing::random_canvas;
using molrl::testing::random_motion;

namespace {

void expect_orthonormal(const LocalFrame& f, double tol = 1e-12) {
  EXPECT_NEAR(norm(f.e1), 1.0, tol);
  EXPECT_NEAR(norm(f.e2), 1.0, tol);
  EXPECT_NEAR(norm(f.e3), 1.0, tol);
  EXPECT_NEAR(dot(f.e1, f.e2), 0.0, tol);
  EXPECT_NEAR(dot(f.e1, f.e3), 0.0, tol);
  EXPECT_NEAR(dot(f.e2, f.e3), 0.0, tol);
  // right-handed
  EXPECT_NEAR(dot(cross(f.e1, f.e2), f.e3), 1.0, tol);
}

}  // namespace

TEST(Formula, ParsesCountsAndRepeats) {
  const Bag b = parse_formula("C3H8O");
  EXPECT_EQ(b.count(Element::C), 3);
  EXPECT_EQ(b.count(Element::H), 8);
  EXPECT_EQ(b.count(Element::O), 1);
  EXPECT_EQ(b.total(), 12);
  EXPECT_EQ(parse_formula("CH3CH3"), parse_formula("C2H6"));
  EXPECT_EQ(parse_formula("H6C4O3"), parse_formula("C4H6O3"));
}

TEST(Formula, KeyOrdersCarbonHydrogenThenAlphabetical) {
  EXPECT_EQ(parse_formula("OH8C3").formula_key(), "C3H8O");
  EXPECT_EQ(parse_formula("NCH").formula_key(), "CHN");
  EXPECT_EQ(parse_formula("SH2").formula_key(), "H2S");
  EXPECT_EQ(parse_formula("ONH3C").formula_key(), "CH3NO");
}

TEST(Formula, RejectsBadInput) {
  EXPECT_THROW(parse_formula(""), FormulaError);
  EXPECT_THROW(parse_formula("Xe2"), FormulaError);
  EXPECT_THROW(parse_formula("c2h6"), FormulaError);
  EXPECT_THROW(parse_formula("C2-H6"), FormulaError);
}

TEST(Bag, TakeAndAdd) {
  Bag b = parse_formula("H2O");
  b.take(Element::H);
  b.take(Element::H);
  EXPECT_THROW(b.take(Element::H), std::logic_error);
  b.take(Element::O);
  EXPECT_TRUE(b.empty());
  b.add(Element::C, 2);
  EXPECT_EQ(b.count(Element::C), 2);
}

TEST(Elements, SymbolsRoundTrip) {
  for (Element e : kAllElements) {
    EXPECT_EQ(element_from_symbol(symbol(e)), e);
    EXPECT_EQ(element_from_atomic_number(element_info(e).atomic_number), e);
  }
  EXPECT_FALSE(element_from_symbol("Q").has_value());
  EXPECT_EQ(element_info(Element::C).target_valence, 4);
  EXPECT_EQ(element_info(Element::N).target_valence, 3);
  EXPECT_EQ(element_info(Element::O).target_valence, 2);
  EXPECT_EQ(element_info(Element::H).target_valence, 1);
}

TEST(Frame, SingleAtomUsesGlobalAxes) {
  Canvas c;
  c.append(Element::C, {1, 2, 3});
  const LocalFrame f = build_frame(c, 0);
  EXPECT_EQ(f.origin, (Vec3{1, 2, 3}));
  EXPECT_EQ(f.e1, (Vec3{1, 0, 0}));
  EXPECT_EQ(f.e2, (Vec3{0, 1, 0}));
  EXPECT_EQ(f.e3, (Vec3{0, 0, 1}));
}

TEST(Frame, TwoAtomsPointE1AtNeighbour) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    Canvas c;
    const Vec3 a{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Vec3 b = a + Vec3{rng.normal(), rng.normal(), rng.normal()};
    c.append(Element::C, a);
    c.append(Element::H, b);
    const LocalFrame f = build_frame(c, 0);
    expect_orthonormal(f);
    const Vec3 u = normalized(b - a);
    EXPECT_NEAR(dot(f.e1, u), 1.0, 1e-12);
  }
}

TEST(Frame, TwoNearestNeighboursSpanPlane) {
  Canvas c;
  c.append(Element::C, {0, 0, 0});
  c.append(Element::H, {5, 0, 0});   // far
  c.append(Element::H, {0, 1.1, 0});  // nearest
  c.append(Element::H, {0, 0, 1.5});  // second nearest
  const LocalFrame f = build_frame(c, 0);
  expect_orthonormal(f);
  EXPECT_NEAR(f.e1.y, 1.0, 1e-12);
  // second neighbour lies in the e1/e2 half-plane with positive e2 component
  EXPECT_NEAR(f.e2.z, 1.0, 1e-12);
  EXPECT_NEAR(dot(Vec3{0, 0, 1.5}, f.e3), 0.0, 1e-12);
}

TEST(Frame, TieBreaksOnLowerIndex) {
  Canvas c;
  c.append(Element::C, {0, 0, 0});
  c.append(Element::H, {0, 0, 1});
  c.append(Element::H, {1, 0, 0});
  c.append(Element::H, {0, 1, 0});
  const LocalFrame f = build_frame(c, 0);
  EXPECT_NEAR(f.e1.z, 1.0, 1e-12);
  EXPECT_NEAR(f.e2.x, 1.0, 1e-12);
}

TEST(Frame, CollinearNeighboursFallBackToTwoAtomRule) {
  Canvas c;
  c.append(Element::C, {0, 0, 0});
  c.append(Element::C, {1.5, 0, 0});
  c.append(Element::C, {3.0, 0, 0});
  const LocalFrame f = build_frame(c, 0);
  expect_orthonormal(f);
  Canvas two;
  two.append(Element::C, {0, 0, 0});
  two.append(Element::C, {1.5, 0, 0});
  const LocalFrame g = build_frame(two, 0);
  EXPECT_EQ(f.e1, g.e1);
  EXPECT_EQ(f.e2, g.e2);
  EXPECT_EQ(f.e3, g.e3);
}

TEST(Frame, OrthonormalOnRandomCanvases) {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const Canvas c = random_canvas(rng, 1 + static_cast<int>(rng.below(8)));
    expect_orthonormal(build_frame(c, rng.below(c.size())));
  }
}

TEST(Frame, RejectsBadArguments) {
  EXPECT_THROW(build_frame(Canvas{}, 0), std::invalid_argument);
  Canvas c;
  c.append(Element::H, {});
  EXPECT_THROW(build_frame(c, 1), std::out_of_range);
}

TEST(Placement, RoundTripWithinTolerance) {
  Rng rng(5);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Canvas c = random_canvas(rng, 1 + static_cast<int>(rng.below(6)));
    const LocalFrame f = build_frame(c, rng.below(c.size()));
    const SphericalCoords s{rng.uniform(0.5, 3.0), rng.uniform(0.01, kPi - 0.01), rng.uniform(-kPi, kPi)};
    const Vec3 p = place_atom(f, s);
    const SphericalCoords back = recover_coords(f, p);
    EXPECT_NEAR(back.distance, s.distance, 1e-9);
    EXPECT_NEAR(back.alpha, s.alpha, 1e-9);
    EXPECT_NEAR(wrap_angle(back.psi - s.psi), 0.0, 1e-9);
    worst = std::max(worst, distance(place_atom(f, back), p));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Placement, PoleHasZeroAzimuth) {
  LocalFrame f;
  const SphericalCoords c = recover_coords(f, {2.0, 0, 0});
  EXPECT_DOUBLE_EQ(c.alpha, 0.0);
  EXPECT_DOUBLE_EQ(c.psi, 0.0);
  EXPECT_THROW(recover_coords(f, {0, 0, 0}), std::invalid_argument);
}

TEST(Placement, EquivariantUnderRigidMotion) {
  Rng rng(17);
  for (int t = 0; t < 100; ++t) {
    const Canvas c = random_canvas(rng, 3 + static_cast<int>(rng.below(5)));
    const auto m = random_motion(rng);
    const Canvas moved = m.apply(c);
    const std::size_t focus = rng.below(c.size());
    const SphericalCoords s{rng.uniform(0.8, 1.8), rng.uniform(0.1, 3.0), rng.uniform(-3.0, 3.0)};
    const Vec3 p = place_atom(build_frame(c, focus), s);
    const Vec3 q = place_atom(build_frame(moved, focus), s);
    EXPECT_LE(distance(m.apply(p), q), 1e-9);
    const LocalFrame fa = build_frame(c, focus);
    const LocalFrame fb = build_frame(moved, focus);
    EXPECT_LE(distance(m.rotate(fa.e1), fb.e1), 1e-9);
    EXPECT_LE(distance(m.rotate(fa.e2), fb.e2), 1e-9);
    EXPECT_LE(distance(m.rotate(fa.e3), fb.e3), 1e-9);
  }
}

TEST(Placement, TwoAtomDistanceAndPolarAngleInvariant) {
  Rng rng(23);
  for (int t = 0; t < 100; ++t) {
    const Canvas c = random_canvas(rng, 2);
    const auto m = random_motion(rng);
    const SphericalCoords s{1.2, rng.uniform(0.1, 3.0), rng.uniform(-3.0, 3.0)};
    const Vec3 p = place_atom(build_frame(c, 0), s);
    const Vec3 q = place_atom(build_frame(m.apply(c), 0), s);
    const Canvas moved = m.apply(c);
    EXPECT_NEAR(distance(p, c[1].position), distance(q, moved[1].position), 1e-9);
  }
}

TEST(Angles, ClampAndWrap) {
  EXPECT_EQ(clamp_alpha(-1.0), kAlphaEps);
  EXPECT_EQ(clamp_alpha(4.0), kPi - kAlphaEps);
  EXPECT_EQ(clamp_alpha(1.0), 1.0);
  EXPECT_DOUBLE_EQ(wrap_angle(kPi), kPi);
  EXPECT_DOUBLE_EQ(wrap_angle(-kPi), kPi);
  EXPECT_NEAR(wrap_angle(3 * kPi / 2), -kPi / 2, 1e-15);
  EXPECT_NEAR(wrap_angle(-5 * kPi / 2), -kPi / 2, 1e-14);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double w = wrap_angle(rng.uniform(-50, 50));
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
  }
}

TEST(Xyz, RoundTrip) {
  const Canvas c = molrl::testing::methane();
  std::stringstream s;
  write_xyz(s, c, "methane test");
  write_xyz(s, molrl::testing::water(), "water");
  const auto frames = read_xyz(s);
  ASSERT_EQ(frames.size(), 2u);
  EXPECT_EQ(frames[0].comment, "methane test");
  ASSERT_EQ(frames[0].canvas.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(frames[0].canvas[i].element, c[i].element);
    EXPECT_LE(distance(frames[0].canvas[i].position, c[i].position), 1e-8);
  }
  EXPECT_EQ(frames[1].canvas.composition(), parse_formula("H2O"));
}

TEST(Xyz, ErrorsCiteTheLine) {
  std::stringstream s("2\ncomment\nC 0 0 0\nQ 1 0 0\n");
  try {
    read_xyz(s);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  std::stringstream t("3\ncomment\nC 0 0 0\n");
  EXPECT_THROW(read_xyz(t), std::runtime_error);
}
