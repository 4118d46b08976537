#include <gtest/gtest.h>

#include <cmath>

#include "molrl/env.hpp"
#include "testing.hpp"

using namespace molrl;

namespace {

/// Surrogate energies shifted by per-element offsets, with non-zero isolated-atom references.
class OffsetCalculator final : public Calculator {
 public:
  CalculatorResult calculate(const Canvas& c, PropertyRequest props) override {
    CalculatorResult r = inner_.calculate(c, props);
    for (const auto& a : c.atoms()) r.energy += offset(a.element);
    return r;
  }
  double atom_reference_energy(Element e) override { return offset(e) + 0.25 * index_of(e); }
  std::string name() const override { return "offset"; }

 private:
  static double offset(Element e) { return -1.5 - 0.7 * index_of(e); }
  SurrogateCalculator inner_;
};

class FailingCalculator final : public Calculator {
 public:
  CalculatorResult calculate(const Canvas& c, PropertyRequest) override {
    if (c.size() >= 2) throw CalculatorError("backend down");
    return {};
  }
  double atom_reference_energy(Element) override { return 0.0; }
  std::string name() const override { return "failing"; }
};

Action act(int focus, Element e, double d = 1.1, double alpha = 1.9, double psi = 0.4) {
  Action a;
  a.focus = focus;
  a.element = e;
  a.raw = {d, alpha, psi};
  return a;
}

/// Random action that respects the bag; spatial values keep atoms apart most of the time.
Action random_action(const State& s, Rng& rng) {
  std::vector<Element> left;
  for (Element e : kAllElements) {
    if (s.bag.count(e) > 0) left.push_back(e);
  }
  Action a;
  a.element = left[rng.below(left.size())];
  a.focus = s.canvas.empty() ? 0 : static_cast<int>(rng.below(s.canvas.size()));
  a.raw = {rng.uniform(0.9, 1.7), rng.uniform(0.3, 3.0), rng.uniform(-kPi, kPi)};
  return a;
}

}  // namespace

TEST(AtomizationTransform, PinnedValues) {
  EXPECT_EQ(atomization_transform(2.0), 4.0);
  EXPECT_EQ(atomization_transform(-1.0), -1.0);
  EXPECT_EQ(atomization_transform(0.0), 0.0);
  EXPECT_DOUBLE_EQ(atomization_transform(0.5), 0.625);
  EXPECT_EQ(atomization_transform(-7.25), -7.25);
}

TEST(AtomizationTransform, ContinuousAndMonotone) {
  double prev = atomization_transform(-5.0);
  for (double x = -5.0 + 1e-3; x < 5.0; x += 1e-3) {
    const double y = atomization_transform(x);
    EXPECT_GT(y, prev);
    prev = y;
  }
  EXPECT_NEAR(atomization_transform(1e-9), atomization_transform(-1e-9), 1e-8);
}

TEST(AgentPresets, CoefficientTable) {
  struct Row {
    const char* name;
    double a, f, v;
  };
  const Row rows[] = {{"A", 1, 0, 0}, {"AV", 1, 0, 3}, {"F", 0, 1, 0}, {"FV", 0, 1, 3}, {"AFV", 1, 1, 3}};
  for (const auto& r : rows) {
    const RewardConfig c = agent_preset(r.name);
    EXPECT_EQ(c.coef_atomization, r.a) << r.name;
    EXPECT_EQ(c.coef_formation, r.f) << r.name;
    EXPECT_EQ(c.coef_validity, r.v) << r.name;
    EXPECT_EQ(c.kill_reward, -3.0);
    EXPECT_EQ(c.shaping_per_step, 0.05);
    EXPECT_FALSE(c.dipole_schedule.has_value());
  }
  EXPECT_THROW(agent_preset("B"), std::invalid_argument);
}

TEST(LinearSchedule, EntropyDefaults) {
  const LinearSchedule s{0, 30000, 0.15, 0.25};
  EXPECT_EQ(s.value(0), 0.15);
  EXPECT_DOUBLE_EQ(s.value(15000), 0.20);
  EXPECT_EQ(s.value(30000), 0.25);
  EXPECT_EQ(s.value(-10), 0.15);
  EXPECT_EQ(s.value(90000), 0.25);
}

TEST(LinearSchedule, Parse) {
  const auto s = LinearSchedule::parse("0:2500:0:2");
  EXPECT_EQ(s.start_iter, 0);
  EXPECT_EQ(s.end_iter, 2500);
  EXPECT_EQ(s.value(1250), 1.0);
  EXPECT_EQ(s.value(5000), 2.0);
  const auto flat = LinearSchedule::parse("10:10:0.5:1.5");
  EXPECT_EQ(flat.value(9), 0.5);
  EXPECT_EQ(flat.value(10), 0.5);
  EXPECT_EQ(flat.value(11), 1.5);
  for (const char* bad : {"", "1:2:3", "a:2:0:1", "5:1:0:1", "1:2:0:1:5", "1:2x:0:1"}) {
    EXPECT_THROW(LinearSchedule::parse(bad), std::invalid_argument) << bad;
  }
}

TEST(RewardConfig, Validation) {
  RewardConfig c = agent_preset("AV");
  EXPECT_NO_THROW(c.validate());
  c.kill_reward = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = agent_preset("AV");
  c.energy_scale = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(MoleculeEnv, ResetAndFirstAtomAtOrigin) {
  SurrogateCalculator calc;
  MoleculeEnv env(agent_preset("AV"), calc);
  const State s = env.reset(parse_formula("CH4"));
  EXPECT_TRUE(s.canvas.empty());
  EXPECT_EQ(s.step, 0);
  EXPECT_EQ(s.horizon, 5);
  const auto out = env.step(s, act(3, Element::C, 1.4, 0.2, 2.0), 0);
  ASSERT_EQ(out.next.canvas.size(), 1u);
  EXPECT_EQ(out.next.canvas[0].position, (Vec3{0, 0, 0}));
  EXPECT_EQ(out.next.bag.count(Element::C), 0);
  EXPECT_EQ(out.next.step, 1);
  EXPECT_FALSE(out.done);
  EXPECT_EQ(out.reward, 0.05);
  EXPECT_THROW(env.reset(Bag{}), std::invalid_argument);
}

TEST(MoleculeEnv, RejectsIllegalActions) {
  SurrogateCalculator calc;
  MoleculeEnv env(agent_preset("AV"), calc);
  State s = env.reset(parse_formula("CH4"));
  EXPECT_THROW(env.step(s, act(0, Element::O), 0), std::invalid_argument);
  s = env.step(s, act(0, Element::C), 0).next;
  EXPECT_THROW(env.step(s, act(1, Element::H), 0), std::out_of_range);
  EXPECT_THROW(env.step(s, act(-1, Element::H), 0), std::out_of_range);
}

TEST(MoleculeEnv, KillOnlyCarriesKillReward) {
  SurrogateCalculator calc;
  RewardConfig cfg = agent_preset("AFV");
  MoleculeEnv env(cfg, calc);
  State s = env.reset(parse_formula("CH4"));
  s = env.step(s, act(0, Element::C), 0).next;
  const auto out = env.step(s, act(0, Element::H, 0.3), 0);
  EXPECT_TRUE(out.kill);
  EXPECT_TRUE(out.done);
  EXPECT_FALSE(out.calculator_failed);
  EXPECT_EQ(out.reward, -3.0);
  EXPECT_EQ(out.components.kill, -3.0);
  EXPECT_EQ(out.components.shaping, 0.0);
  EXPECT_EQ(out.components.formation, 0.0);
  EXPECT_EQ(out.components.validity, 0.0);
  EXPECT_FALSE(out.terminal.has_value());
}

TEST(MoleculeEnv, PlacementClampsDistance) {
  SurrogateCalculator calc;
  RewardConfig cfg = agent_preset("AV");
  cfg.kill_distance = 0.0;
  MoleculeEnv env(cfg, calc);
  State s = env.reset(parse_formula("CH4"));
  s = env.step(s, act(0, Element::C), 0).next;
  const auto near = env.step(s, act(0, Element::H, -4.0), 0);
  EXPECT_NEAR(norm(near.next.canvas[1].position), kMinPlacementDistance, 1e-12);
  const auto far = env.step(s, act(0, Element::H, 40.0), 0);
  EXPECT_NEAR(norm(far.next.canvas[1].position), kMaxPlacementDistance, 1e-12);
}

TEST(MoleculeEnv, TerminalRewardComposition) {
  SurrogateCalculator calc;
  RewardConfig cfg = agent_preset("AV");
  cfg.energy_scale = 0.1;
  MoleculeEnv env(cfg, calc);
  const Canvas water = molrl::testing::water();
  State s = env.reset(parse_formula("H2O"));
  // Rebuild the fixture atom by atom: O at origin, then H along e1, then H in the e1/e2 plane.
  s = env.step(s, act(0, Element::O), 0).next;
  s = env.step(s, act(0, Element::H, 0.96, 0.0, 0.0), 0).next;
  const auto out = env.step(s, act(0, Element::H, 0.96, 104.5 * kPi / 180.0, 0.0), 0);
  ASSERT_TRUE(out.done);
  ASSERT_TRUE(out.terminal.has_value());
  EXPECT_TRUE(out.terminal->valid);
  const double e = SurrogateCalculator::energy(out.next.canvas, calc.params());
  EXPECT_NEAR(out.terminal->delta_e, -e, 1e-12);
  EXPECT_NEAR(SurrogateCalculator::energy(water, calc.params()), e, 1e-9);
  EXPECT_NEAR(out.components.atomization, atomization_transform(0.1 * -e), 1e-12);
  EXPECT_EQ(out.components.validity, 3.0);
  EXPECT_EQ(out.components.shaping, 0.05);
  EXPECT_DOUBLE_EQ(out.reward, out.components.total());
}

TEST(MoleculeEnv, InvalidTerminalHasNoValidityBonus) {
  SurrogateCalculator calc;
  MoleculeEnv env(agent_preset("AV"), calc);
  State s = env.reset(parse_formula("H2O"));
  s = env.step(s, act(0, Element::H), 0).next;
  s = env.step(s, act(0, Element::H, 0.75), 0).next;
  const auto out = env.step(s, act(0, Element::O, 2.8, 2.0), 0);
  ASSERT_TRUE(out.terminal.has_value());
  EXPECT_FALSE(out.terminal->valid);
  EXPECT_EQ(out.components.validity, 0.0);
}

TEST(MoleculeEnv, TelescopingFormationSum) {
  Rng rng(11);
  const char* formulas[] = {"H2O", "CH4", "C2H6O", "HCN", "CH5N", "C3H8", "H2S", "CH2O"};
  for (int variant = 0; variant < 2; ++variant) {
    SurrogateCalculator surrogate;
    OffsetCalculator offset;
    Calculator& calc = variant == 0 ? static_cast<Calculator&>(surrogate) : offset;
    RewardConfig cfg = agent_preset("F");
    MoleculeEnv env(cfg, calc);
    int episodes = 0;
    int attempts = 0;
    double worst = 0.0;
    while (episodes < 100) {
      ASSERT_LT(++attempts, 10000);
      State s = env.reset(parse_formula(formulas[rng.below(std::size(formulas))]));
      double sum_f = 0.0;
      bool killed = false;
      std::optional<TerminalInfo> terminal;
      while (true) {
        const auto out = env.step(s, random_action(s, rng), 0);
        if (out.kill) {
          killed = true;
          break;
        }
        sum_f += out.components.formation;
        s = out.next;
        if (out.done) {
          terminal = out.terminal;
          break;
        }
      }
      if (killed) continue;
      ASSERT_TRUE(terminal.has_value());
      worst = std::max(worst, std::abs(sum_f - cfg.energy_scale * terminal->delta_e));
      ++episodes;
    }
    EXPECT_LE(worst, 1e-9) << "variant " << variant;
  }
}

TEST(MoleculeEnv, FormationStep) {
  SurrogateCalculator calc;
  RewardConfig cfg = agent_preset("F");
  cfg.energy_scale = 0.5;
  MoleculeEnv env(cfg, calc);
  State s = env.reset(parse_formula("CH4"));
  const auto first = env.step(s, act(0, Element::C), 0);
  const double e1 = SurrogateCalculator::energy(first.next.canvas, calc.params());
  EXPECT_NEAR(first.components.formation, 0.5 * (0.0 - e1), 1e-12);
  const auto second = env.step(first.next, act(0, Element::H, 1.09), 0);
  const double e2 = SurrogateCalculator::energy(second.next.canvas, calc.params());
  EXPECT_NEAR(second.components.formation, 0.5 * (e1 - e2), 1e-12);
  EXPECT_EQ(second.components.atomization, 0.0);
}

TEST(MoleculeEnv, DipoleTermFollowsSchedule) {
  SurrogateCalculator calc;
  RewardConfig cfg = agent_preset("A");
  cfg.dipole_schedule = LinearSchedule::parse("0:100:0:2");
  MoleculeEnv env(cfg, calc);
  State s = env.reset(parse_formula("H2O"));
  s = env.step(s, act(0, Element::O), 0).next;
  s = env.step(s, act(0, Element::H, 0.96, 0.0, 0.0), 0).next;
  const Action last = act(0, Element::H, 0.96, 1.8, 0.0);
  const auto at0 = env.step(s, last, 0);
  const auto at50 = env.step(s, last, 50);
  const auto at500 = env.step(s, last, 500);
  ASSERT_TRUE(at50.terminal && at50.terminal->dipole_magnitude);
  const double mu = *at50.terminal->dipole_magnitude;
  EXPECT_GT(mu, 0.0);
  EXPECT_NEAR(mu, norm(SurrogateCalculator::dipole(at50.next.canvas, calc.params())), 1e-12);
  EXPECT_EQ(at0.components.dipole, 0.0);
  EXPECT_NEAR(at50.components.dipole, 1.0 * mu, 1e-12);
  EXPECT_NEAR(at500.components.dipole, 2.0 * mu, 1e-12);
  EXPECT_EQ(at50.components.atomization, at500.components.atomization);
}

TEST(MoleculeEnv, CalculatorFailureEndsEpisode) {
  FailingCalculator calc;
  MoleculeEnv env(agent_preset("F"), calc);
  State s = env.reset(parse_formula("CH4"));
  s = env.step(s, act(0, Element::C), 0).next;
  const auto out = env.step(s, act(0, Element::H), 0);
  EXPECT_TRUE(out.kill);
  EXPECT_TRUE(out.calculator_failed);
  EXPECT_EQ(out.reward, -3.0);
}

TEST(MoleculeEnv, DeterministicStep) {
  SurrogateCalculator calc;
  MoleculeEnv env(agent_preset("AFV"), calc);
  Rng rng(3);
  State s = env.reset(parse_formula("C2H6O"));
  while (true) {
    const Action a = random_action(s, rng);
    const auto x = env.step(s, a, 7);
    const auto y = env.step(s, a, 7);
    EXPECT_EQ(x.next.canvas, y.next.canvas);
    EXPECT_EQ(x.reward, y.reward);
    if (x.done) break;
    s = x.next;
  }
}
