#include <gtest/gtest.h>

#include <sstream>
#include <thread>

#include "molrl/discovery.hpp"
#include "testing.hpp"

using namespace molrl;
namespace mt = molrl::testing;

namespace {

CanonicalKey key_of(const Canvas& c) { return canonical_key(perceive_bonds(c)); }

MoleculeRecord record_of(const Canvas& c, bool killed = false) {
  MoleculeRecord r;
  r.formula = c.composition().formula_key();
  r.canvas = c;
  r.killed = killed;
  r.valid = !killed && is_valid(c);
  if (r.valid) r.key = key_of(c);
  return r;
}

/// Methane with one hydrogen pulled out of bonding range.
Canvas broken_methane() {
  const Canvas m = mt::methane();
  std::vector<Atom> atoms(m.atoms().begin(), m.atoms().end());
  atoms[4].position = atoms[4].position * 3.0;
  return Canvas(atoms);
}

NetConfig tiny_net() {
  NetConfig c;
  c.width = 8;
  c.interactions = 1;
  c.num_rbf = 6;
  return c;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Ratios, CountsAndNullWhenAbsent) {
  const std::set<CanonicalKey> found{{"v1:a"}, {"v1:b"}, {"v1:c"}};
  ReferenceEntry ref;
  ref.keys = {{"v1:a"}, {"v1:d"}};
  const RatioCounts r = ratios(found, &ref);
  EXPECT_EQ(r.n_unique, 3u);
  EXPECT_EQ(r.n_rediscovered, 1u);
  EXPECT_EQ(r.n_novel, 2u);
  EXPECT_EQ(r.n_reference, 2u);
  EXPECT_EQ(*r.rediscovery, 0.5);
  EXPECT_EQ(*r.expansion, 1.0);
  const RatioCounts none = ratios(found, nullptr);
  EXPECT_EQ(none.n_novel, 3u);
  EXPECT_FALSE(none.rediscovery.has_value());
  EXPECT_FALSE(none.expansion.has_value());
}

TEST(Metrics, RaeRmsdStability) {
  EXPECT_DOUBLE_EQ(rae(-10.0, {-12.0, -11.0}), 1.5);
  EXPECT_THROW(rae(0.0, {}), std::invalid_argument);
  const Canvas a = mt::methane();
  std::vector<Atom> atoms(a.atoms().begin(), a.atoms().end());
  atoms[0].position.x += 0.5;
  const Canvas b(atoms);
  EXPECT_NEAR(rmsd(a, b), std::sqrt(0.25 / 5.0), 1e-15);
  EXPECT_EQ(rmsd(a, a), 0.0);
  EXPECT_THROW(rmsd(a, mt::water()), std::invalid_argument);
  EXPECT_TRUE(relax_stability(a, a));
  EXPECT_FALSE(relax_stability(a, broken_methane()));
}

TEST(Aggregate, WeightsBySampleCountAndRenormalises) {
  BagMetrics x, y;
  x.formula = "CH4";
  x.n_sampled = 30;
  x.n_valid = 30;
  x.validity = 1.0;
  x.mean_rae = 2.0;
  x.counts.rediscovery = 1.0;
  y.formula = "C9";
  y.n_sampled = 10;
  y.n_valid = 0;
  y.validity = 0.0;
  y.counts.n_unique = 4;
  const BagMetrics all = aggregate({x, y});
  EXPECT_EQ(all.formula, "ALL");
  EXPECT_EQ(all.n_sampled, 40);
  EXPECT_EQ(all.n_valid, 30);
  EXPECT_DOUBLE_EQ(all.validity, 0.75);
  EXPECT_DOUBLE_EQ(*all.mean_rae, 2.0);
  EXPECT_DOUBLE_EQ(*all.counts.rediscovery, 1.0);
  EXPECT_EQ(all.counts.n_unique, 4u);
  EXPECT_FALSE(all.mean_rmsd.has_value());
  EXPECT_THROW(aggregate({}), std::invalid_argument);
  BagMetrics z;
  EXPECT_THROW(aggregate({z}), std::invalid_argument);
}

TEST(ReferenceSet, ParsesKeysXyzAndEnergies) {
  std::ostringstream xyz;
  write_xyz(xyz, mt::water(), "");
  Json row = {{"formula", "OH2"}, {"xyz", xyz.str()}, {"energy_ev", -5.0}};
  std::istringstream in("{\"formula\":\"CH4\",\"canonical_key\":\"v1:CHHHH|0-1,0-2,0-3,0-4\",\"energy_ev\":-17}\n"
                        "\n" +
                        row.dump() + "\n");
  const ReferenceSet ref = ReferenceSet::parse_jsonl(in);
  EXPECT_EQ(ref.count("CH4"), 1u);
  ASSERT_NE(ref.find("H2O"), nullptr);
  EXPECT_TRUE(ref.find("H2O")->keys.count(key_of(mt::water())));
  EXPECT_EQ(ref.find("H2O")->energies, std::vector<double>{-5.0});
  EXPECT_EQ(ref.find("C2H6"), nullptr);
  EXPECT_EQ(ref.find("CH4")->keys.begin()->key, key_of(mt::methane()).key);

  std::istringstream bad("{\"formula\":\"CH4\",\"canonical_key\":\"v1:x\"}\n{oops\n");
  try {
    ReferenceSet::parse_jsonl(bad);
    FAIL() << "expected a parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(ReferenceSet, BundledMiniReference) {
  const ReferenceSet ref = ReferenceSet::load_jsonl(std::string(MOLRL_SOURCE_DIR) + "/data/mini_reference.jsonl");
  EXPECT_EQ(ref.count("CH4"), 1u);
  EXPECT_EQ(ref.count("C2H6O"), 2u);
  EXPECT_EQ(ref.count("C3H8O"), 3u);
  for (const auto& [formula, entry] : ref.entries()) {
    EXPECT_EQ(entry.keys.size(), enumerate_isomers(parse_formula(formula)).size()) << formula;
  }
}

TEST(DiscoveryBuffer, RecordsUniqueIsomersAndBestEnergy) {
  DiscoveryBuffer buf;
  EXPECT_TRUE(buf.record("CH4", mt::methane(), 3.0, 5));
  EXPECT_FALSE(buf.record("CH4", mt::methane(), 4.5, 7));
  EXPECT_FALSE(buf.record("CH4", broken_methane(), 9.0, 8));
  EXPECT_TRUE(buf.record("H2O", mt::water(), 1.0, 9));
  EXPECT_EQ(buf.unique_count("CH4"), 1u);
  EXPECT_EQ(buf.unique_count("C2H6"), 0u);
  EXPECT_EQ(buf.total_unique(), 2u);
  const auto snap = buf.snapshot();
  const FormulaDiscoveries& ch4 = snap.at("CH4");
  EXPECT_EQ(ch4.sampled, 3);
  EXPECT_EQ(ch4.valid, 2);
  const DiscoveryRecord& rec = ch4.isomers.begin()->second;
  EXPECT_EQ(rec.first_iter, 5);
  EXPECT_EQ(rec.count, 2);
  EXPECT_EQ(rec.best_delta_e, 4.5);

  const DiscoveryBuffer back = DiscoveryBuffer::from_json(buf.to_json());
  EXPECT_EQ(back.to_json().dump(), buf.to_json().dump());

  std::ostringstream out;
  buf.write_jsonl(out, {{"config_hash", "abc"}, {"seed", 3}});
  const auto rows = lines(out.str());
  ASSERT_EQ(rows.size(), 2u);
  const Json first = Json::parse(rows[0]);
  EXPECT_EQ(first.at("formula"), "CH4");
  EXPECT_EQ(first.at("config_hash"), "abc");
  EXPECT_EQ(first.at("seed"), 3);
  EXPECT_EQ(Json::parse(rows[1]).at("formula"), "H2O");
}

TEST(DiscoveryBuffer, ConcurrentRecording) {
  DiscoveryBuffer buf;
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&buf, t] {
      for (int i = 0; i < 200; ++i) buf.record(i % 2 ? "CH4" : "H2O", i % 2 ? mt::methane() : mt::water(), t, i);
    });
  }
  for (auto& th : threads) th.join();
  const auto snap = buf.snapshot();
  EXPECT_EQ(snap.at("CH4").sampled + snap.at("H2O").sampled, 800);
  EXPECT_EQ(snap.at("CH4").isomers.begin()->second.count, 400);
  EXPECT_EQ(buf.total_unique(), 2u);
}

TEST(MoleculeRecord, JsonRoundTrip) {
  MoleculeRecord r = record_of(mt::ethene());
  r.bag_index = 2;
  r.episode = 17;
  r.delta_e = 12.5;
  r.reward.validity = 3.0;
  r.reward.shaping = 0.3;
  r.total_reward = 3.3;
  const MoleculeRecord back = MoleculeRecord::from_json(r.to_json());
  EXPECT_EQ(back.to_json().dump(), r.to_json().dump());
  EXPECT_EQ(back.canvas, r.canvas);
  EXPECT_EQ(canvas_from_json(canvas_to_json(mt::water())), mt::water());
}

TEST(Evaluate, PerBagMetrics) {
  SurrogateCalculator calc;
  ReferenceSet ref;
  ref.add("CH4", key_of(mt::methane()), -20.0);
  ref.add("CH4", CanonicalKey{"v1:other"}, -22.0);
  const std::vector<MoleculeRecord> records{record_of(mt::methane()), record_of(mt::methane()),
                                            record_of(broken_methane()), record_of(mt::methane(), true),
                                            record_of(mt::water())};
  const auto [rows, total] = evaluate_records(records, ref, calc, {});
  ASSERT_EQ(rows.size(), 2u);
  const BagMetrics& ch4 = rows[0];
  EXPECT_EQ(ch4.formula, "CH4");
  EXPECT_EQ(ch4.n_sampled, 4);
  EXPECT_EQ(ch4.n_valid, 2);
  EXPECT_DOUBLE_EQ(ch4.validity, 0.5);
  EXPECT_EQ(ch4.counts.n_unique, 1u);
  EXPECT_EQ(ch4.counts.n_rediscovered, 1u);
  EXPECT_DOUBLE_EQ(*ch4.counts.rediscovery, 0.5);
  EXPECT_DOUBLE_EQ(*ch4.counts.expansion, 0.0);
  const double e = SurrogateCalculator::energy(mt::methane(), calc.params());
  EXPECT_NEAR(*ch4.mean_rae, e + 21.0, 1e-9);
  EXPECT_EQ(ch4.rrae_count, 2);
  ASSERT_TRUE(ch4.mean_rrae.has_value());
  EXPECT_LE(*ch4.mean_rrae, *ch4.mean_rae + 1e-12);
  EXPECT_EQ(*ch4.relax_stability, 1.0);
  EXPECT_FALSE(ch4.uniqueness.has_value());

  const BagMetrics& h2o = rows[1];
  EXPECT_EQ(h2o.formula, "H2O");
  EXPECT_FALSE(h2o.counts.rediscovery.has_value());
  EXPECT_FALSE(h2o.mean_rae.has_value());
  EXPECT_EQ(total.n_sampled, 5);
  EXPECT_DOUBLE_EQ(total.validity, (4 * 0.5 + 1 * 1.0) / 5);

  EvaluateOptions no_relax;
  no_relax.relax = false;
  no_relax.uniqueness = true;
  const auto [rows2, total2] = evaluate_records(records, ref, calc, no_relax);
  EXPECT_EQ(rows2[0].rrae_count, 0);
  EXPECT_FALSE(rows2[0].mean_rrae.has_value());
  EXPECT_DOUBLE_EQ(*rows2[0].uniqueness, 0.5);
}

TEST(ReportCsv, HeaderNullCellsAndEmptyInput) {
  SurrogateCalculator calc;
  const std::vector<MoleculeRecord> records{record_of(mt::water())};
  const auto [rows, total] = evaluate_records(records, ReferenceSet{}, calc, {});
  std::ostringstream out;
  write_report_csv(out, rows, total, false, "config_hash=x seed=1");
  const auto l = lines(out.str());
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0], "# config_hash=x seed=1");
  EXPECT_EQ(l[1].substr(0, 28), "formula,n_sampled,n_valid,va");
  EXPECT_EQ(l[2].rfind("H2O,1,1,1,1,0,1,0,,,,,1,", 0), 0u) << l[2];
  EXPECT_EQ(l[3].substr(0, 4), "ALL,");

  const auto [none, none_total] = evaluate_records({}, ReferenceSet{}, calc, {});
  std::ostringstream empty;
  write_report_csv(empty, none, none_total, true, "");
  const auto e = lines(empty.str());
  ASSERT_EQ(e.size(), 1u);
  EXPECT_NE(e[0].find(",uniqueness"), std::string::npos);
}

TEST(Sampling, Counts) {
  const std::vector<Bag> bags{parse_formula("C2H6O"), parse_formula("CH4"), parse_formula("C8")};
  ReferenceSet ref;
  ref.add("C2H6O", {"v1:a"});
  ref.add("C2H6O", {"v1:b"});
  ref.add("CH4", {"v1:c"});
  SampleOptions o;
  o.count = 7;
  EXPECT_EQ(sample_counts(bags, o, nullptr), (std::vector<long>{7, 7, 7}));
  o.mode = SampleMode::Proportional;
  o.proportionality = 2.5;
  EXPECT_EQ(sample_counts(bags, o, &ref), (std::vector<long>{5, 3, 0}));
  EXPECT_THROW(sample_counts(bags, o, nullptr), std::invalid_argument);
  o.greedy = true;
  EXPECT_EQ(sample_counts(bags, o, &ref), (std::vector<long>{1, 1, 1}));
}

TEST(Sampling, ReproduciblePerBagStreams) {
  const Policy policy(tiny_net(), 4);
  SurrogateCalculator calc;
  MoleculeEnv env(agent_preset("AV"), calc);
  SampleOptions o;
  o.count = 6;
  o.seed = 11;
  auto collect = [&](const std::vector<Bag>& bags, const SampleOptions& opts, DiscoveryBuffer* buf) {
    std::vector<std::string> out;
    sample_protocol(policy, bags, env, opts, nullptr, buf, [&](const MoleculeRecord& r) {
      out.push_back(r.to_json().dump());
    });
    return out;
  };
  const std::vector<Bag> both{parse_formula("CH4"), parse_formula("C2H6O")};
  DiscoveryBuffer buf;
  const auto a = collect(both, o, &buf);
  const auto b = collect(both, o, nullptr);
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(a, b);
  EXPECT_EQ(buf.snapshot().at("CH4").sampled, 6);
  const auto first_only = collect({parse_formula("CH4")}, o, nullptr);
  EXPECT_TRUE(std::equal(first_only.begin(), first_only.end(), a.begin()));
  const Json j = Json::parse(a[7]);
  EXPECT_EQ(j.at("bag_index"), 1);
  EXPECT_EQ(j.at("episode"), 1);

  o.greedy = true;
  const auto g1 = collect(both, o, nullptr);
  o.seed = 999;
  const auto g2 = collect(both, o, nullptr);
  EXPECT_EQ(g1.size(), 2u);
  EXPECT_EQ(g1, g2);
}
