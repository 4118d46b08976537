// Reference JSON-lines adapter backed by the surrogate potential. Fault flags let tests
// exercise the client's error paths.

#include <chrono>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "molrl/energy.hpp"
#include "molrl/protocol.hpp"

using namespace molrl;

int main(int argc, char** argv) {
  CLI::App app{"Surrogate-backed calculator adapter speaking the JSON-lines protocol"};
  long drop_id_at = -1, hang_at = -1, exit_at = -1, bad_json_at = -1, wrong_id_at = -1;
  bool no_dipole = false;
  double valence_weight = SurrogateParams::defaults().valence_weight;
  app.add_option("--drop-id-at", drop_id_at, "Omit \"id\" from the n-th response (1-based)");
  app.add_option("--wrong-id-at", wrong_id_at, "Echo a wrong id in the n-th response");
  app.add_option("--hang-at", hang_at, "Never answer the n-th request");
  app.add_option("--exit-at", exit_at, "Exit before answering the n-th request");
  app.add_option("--bad-json-at", bad_json_at, "Answer the n-th request with malformed JSON");
  app.add_flag("--no-dipole", no_dipole, "Report dipole as unsupported");
  app.add_option("--valence-weight", valence_weight, "Surrogate valence penalty weight (eV)");
  CLI11_PARSE(app, argc, argv);

  SurrogateParams params = SurrogateParams::defaults();
  params.valence_weight = valence_weight;
  SurrogateCalculator calc(params);

  std::string line;
  long n = 0;
  while (std::getline(std::cin, line)) {
    ++n;
    if (n == exit_at) return 1;
    if (n == hang_at) {
      while (true) std::this_thread::sleep_for(std::chrono::seconds(1));
    }
    if (n == bad_json_at) {
      std::cout << "{\"id\": " << '\n' << std::flush;
      continue;
    }
    Json out;
    long id = -1;
    try {
      const Json raw = Json::parse(line);
      if (raw.is_object() && raw.contains("id") && raw["id"].is_number_integer()) id = raw["id"].get<long>();
      const protocol::Request req = protocol::decode_request(line);
      PropertyRequest props;
      bool unsupported = false;
      std::string bad;
      for (const auto& p : req.properties) {
        if (p == "forces") props.forces = true;
        else if (p == "dipole" && !no_dipole) props.dipole = true;
        else if (p != "energy") {
          unsupported = true;
          bad = p;
        }
      }
      if (unsupported) {
        out = Json{{"id", id}, {"error", "unsupported property: " + bad}};
      } else {
        const CalculatorResult r = calc.calculate(protocol::to_canvas(req), props);
        out = Json{{"id", id}, {"energy_ev", r.energy}};
        if (r.forces) {
          Json f = Json::array();
          for (const auto& v : *r.forces) f.push_back({v.x, v.y, v.z});
          out["forces_ev_ang"] = f;
        }
        if (r.dipole) out["dipole_debye"] = {r.dipole->x, r.dipole->y, r.dipole->z};
      }
    } catch (const std::exception& e) {
      out = Json{{"id", id}, {"error", e.what()}};
    }
    if (n == drop_id_at) out.erase("id");
    if (n == wrong_id_at) out["id"] = id + 1000;
    std::cout << out.dump() << '\n' << std::flush;
  }
  return 0;
}
