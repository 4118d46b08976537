#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "molrl/json.hpp"

#include "molrl/energy.hpp"

namespace molrl::protocol {

// Wire format, one UTF-8 JSON object per line:
//   request  {"id": int, "elements": [str], "positions_ang": [[x,y,z]], "properties": ["energy"|"forces"|"dipole"]}
//   response {"id": int, "energy_ev": f64, "forces_ev_ang": [[x,y,z]]?, "dipole_debye": [x,y,z]?, "error": str?}

struct Request {
  long id = 0;
  std::vector<Element> elements;
  std::vector<Vec3> positions;
  std::vector<std::string> properties;
};

struct Response {
  long id = 0;
  std::optional<double> energy;
  std::optional<std::vector<Vec3>> forces;
  std::optional<Vec3> dipole;
  std::optional<std::string> error;
};

class ProtocolError : public CalculatorError {
 public:
  using CalculatorError::CalculatorError;
};

Request make_request(long id, const Canvas& canvas, PropertyRequest props);
std::string encode(const Request& req);
std::string encode(const Response& resp);

/// Strict parsing; throws ProtocolError describing the first schema violation.
Request decode_request(const std::string& line);
Response decode_response(const std::string& line);

Canvas to_canvas(const Request& req);
/// Checks id echo, error field and requested property presence, then converts.
CalculatorResult to_result(const Request& req, const Response& resp);

struct ConformanceIssue {
  int line = 0;  // 1-based transcript line, 0 for adapter-level failures
  std::string message;
};

struct ConformanceReport {
  int exchanges = 0;
  std::vector<ConformanceIssue> issues;
  bool passed() const { return issues.empty() && exchanges > 0; }
};

struct ConformanceOptions {
  std::chrono::milliseconds timeout{10000};
  /// Compare against recorded "energy_ev" values (only meaningful for the backend that recorded them).
  bool compare_values = false;
};

/// Replays a golden transcript against an adapter. Each non-blank, non-'#' line is
/// {"request": {...}, "expect": {"error": bool?, "energy_ev": f64?, "tolerance": f64?}}.
/// The request object is sent verbatim; a timeout or a dead adapter stops the replay.
ConformanceReport check_conformance(const std::string& command, std::istream& transcript,
                                    const ConformanceOptions& options = {});

}  // namespace molrl::protocol

namespace molrl {

/// Child process with piped stdin/stdout (stderr inherited). Killed and reaped on destruction.
class Subprocess {
 public:
  explicit Subprocess(const std::string& command);
  ~Subprocess();
  Subprocess(const Subprocess&) = delete;
  Subprocess& operator=(const Subprocess&) = delete;

  void write_line(const std::string& line);
  /// Next full line (without '\n'); throws CalculatorError on timeout, EOF or exit.
  std::string read_line(std::chrono::milliseconds timeout);
  bool running();
  void terminate();
  int pid() const { return pid_; }

 private:
  int pid_ = -1;
  int in_fd_ = -1;   // parent writes
  int out_fd_ = -1;  // parent reads
  std::string buffer_;
  bool reaped_ = false;
};

}  // namespace molrl
