#include <cmath>
#include <istream>
#include <set>
#include <sstream>

#include "molrl/protocol.hpp"

namespace molrl::protocol {

namespace {

const std::set<std::string> kResponseKeys = {"id", "energy_ev", "forces_ev_ang", "dipole_debye", "error"};

}  // namespace

ConformanceReport check_conformance(const std::string& command, std::istream& transcript,
                                    const ConformanceOptions& options) {
  ConformanceReport report;
  auto issue = [&](int line, const std::string& msg) { report.issues.push_back({line, msg}); };

  std::unique_ptr<Subprocess> proc;
  try {
    proc = std::make_unique<Subprocess>(command);
  } catch (const std::exception& e) {
    issue(0, std::string("cannot launch adapter: ") + e.what());
    return report;
  }

  std::string text;
  int lineno = 0;
  while (std::getline(transcript, text)) {
    ++lineno;
    if (text.find_first_not_of(" \t\r") == std::string::npos || text[text.find_first_not_of(" \t")] == '#') continue;
    Json entry = Json::parse(text, nullptr, false);
    if (entry.is_discarded() || !entry.is_object() || !entry.contains("request")) {
      issue(lineno, "transcript entry is not {\"request\": ..., \"expect\": ...}");
      continue;
    }
    const Json expect = entry.value("expect", Json::object());
    Request req;
    const std::string wire = entry["request"].dump();
    try {
      req = decode_request(wire);
    } catch (const std::exception& e) {
      issue(lineno, std::string("transcript request invalid: ") + e.what());
      continue;
    }
    ++report.exchanges;

    std::string reply;
    try {
      proc->write_line(wire);
      reply = proc->read_line(options.timeout);
    } catch (const std::exception& e) {
      issue(lineno, std::string("no response: ") + e.what());
      break;
    }

    const Json raw = Json::parse(reply, nullptr, false);
    if (raw.is_discarded() || !raw.is_object()) {
      issue(lineno, "response is not a JSON object: " + reply);
      continue;
    }
    for (const auto& [k, v] : raw.items()) {
      if (!kResponseKeys.count(k)) issue(lineno, "unexpected response key \"" + k + "\"");
    }
    Response resp;
    try {
      resp = decode_response(reply);
    } catch (const std::exception& e) {
      issue(lineno, std::string(e.what()) + ": " + reply);
      continue;
    }
    if (resp.id != req.id) {
      issue(lineno, "response id " + std::to_string(resp.id) + " does not echo request id " + std::to_string(req.id));
      continue;
    }
    const bool expect_error = expect.value("error", false);
    if (expect_error) {
      if (!resp.error) issue(lineno, "expected an \"error\" response: " + reply);
      continue;
    }
    if (resp.error) {
      issue(lineno, "unexpected error: " + *resp.error);
      continue;
    }
    try {
      to_result(req, resp);
    } catch (const std::exception& e) {
      issue(lineno, e.what());
      continue;
    }
    if (options.compare_values && expect.contains("energy_ev")) {
      const double want = expect["energy_ev"].get<double>();
      const double tol = expect.value("tolerance", 1e-6);
      if (!(std::abs(*resp.energy - want) <= tol)) {
        std::ostringstream m;
        m.precision(12);
        m << "energy_ev " << *resp.energy << " differs from recorded " << want;
        issue(lineno, m.str());
      }
    }
  }
  if (report.exchanges == 0 && report.issues.empty()) issue(0, "transcript has no exchanges");
  return report;
}

}  // namespace molrl::protocol
