#include "molrl/protocol.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <mutex>
#include <thread>

namespace molrl::protocol {

namespace {

Json vec_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ProtocolError(std::string(what) + " must be a 3-element array");
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!j[k].is_number()) throw ProtocolError(std::string(what) + " entries must be numbers");
    v[k] = j[k].get<double>();
  }
  return v;
}

Json parse_object(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  return j;
}

long parse_id(const Json& j) {
  if (!j.contains("id")) throw ProtocolError("missing \"id\"");
  if (!j["id"].is_number_integer()) throw ProtocolError("\"id\" must be an integer");
  return j["id"].get<long>();
}

}  // namespace

Request make_request(long id, const Canvas& canvas, PropertyRequest props) {
  Request r;
  r.id = id;
  for (const auto& a : canvas.atoms()) {
    r.elements.push_back(a.element);
    r.positions.push_back(a.position);
  }
  r.properties.push_back("energy");
  if (props.forces) r.properties.push_back("forces");
  if (props.dipole) r.properties.push_back("dipole");
  return r;
}

std::string encode(const Request& req) {
  Json j;
  j["id"] = req.id;
  Json elements = Json::array();
  for (Element e : req.elements) elements.push_back(std::string(symbol(e)));
  j["elements"] = std::move(elements);
  Json positions = Json::array();
  for (const auto& p : req.positions) positions.push_back(vec_json(p));
  j["positions_ang"] = std::move(positions);
  j["properties"] = req.properties;
  return j.dump();
}

std::string encode(const Response& resp) {
  Json j;
  j["id"] = resp.id;
  if (resp.energy) j["energy_ev"] = *resp.energy;
  if (resp.forces) {
    Json f = Json::array();
    for (const auto& v : *resp.forces) f.push_back(vec_json(v));
    j["forces_ev_ang"] = std::move(f);
  }
  if (resp.dipole) j["dipole_debye"] = vec_json(*resp.dipole);
  if (resp.error) j["error"] = *resp.error;
  return j.dump();
}

Request decode_request(const std::string& line) {
  const Json j = parse_object(line);
  Request r;
  r.id = parse_id(j);
  if (!j.contains("elements") || !j["elements"].is_array()) throw ProtocolError("\"elements\" must be an array");
  for (const auto& e : j["elements"]) {
    if (!e.is_string()) throw ProtocolError("element symbols must be strings");
    const auto el = element_from_symbol(e.get<std::string>());
    if (!el) throw ProtocolError("unsupported element '" + e.get<std::string>() + "'");
    r.elements.push_back(*el);
  }
  if (!j.contains("positions_ang") || !j["positions_ang"].is_array()) {
    throw ProtocolError("\"positions_ang\" must be an array");
  }
  for (const auto& p : j["positions_ang"]) r.positions.push_back(vec_from(p, "positions_ang row"));
  if (r.positions.size() != r.elements.size()) throw ProtocolError("elements and positions_ang differ in length");
  if (!j.contains("properties") || !j["properties"].is_array()) throw ProtocolError("\"properties\" must be an array");
  for (const auto& p : j["properties"]) {
    if (!p.is_string()) throw ProtocolError("property names must be strings");
    r.properties.push_back(p.get<std::string>());
  }
  return r;
}

Response decode_response(const std::string& line) {
  const Json j = parse_object(line);
  Response r;
  r.id = parse_id(j);
  if (j.contains("error")) {
    if (!j["error"].is_string()) throw ProtocolError("\"error\" must be a string");
    r.error = j["error"].get<std::string>();
  }
  if (j.contains("energy_ev")) {
    if (!j["energy_ev"].is_number()) throw ProtocolError("\"energy_ev\" must be a number");
    r.energy = j["energy_ev"].get<double>();
  }
  if (j.contains("forces_ev_ang")) {
    if (!j["forces_ev_ang"].is_array()) throw ProtocolError("\"forces_ev_ang\" must be an array");
    std::vector<Vec3> f;
    for (const auto& row : j["forces_ev_ang"]) f.push_back(vec_from(row, "forces_ev_ang row"));
    r.forces = std::move(f);
  }
  if (j.contains("dipole_debye")) r.dipole = vec_from(j["dipole_debye"], "dipole_debye");
  if (!r.error && !r.energy) throw ProtocolError("response carries neither \"energy_ev\" nor \"error\"");
  return r;
}

Canvas to_canvas(const Request& req) {
  std::vector<Atom> atoms;
  for (std::size_t i = 0; i < req.elements.size(); ++i) atoms.push_back({req.elements[i], req.positions[i]});
  return Canvas(std::move(atoms));
}

CalculatorResult to_result(const Request& req, const Response& resp) {
  if (resp.id != req.id) {
    throw ProtocolError("response id " + std::to_string(resp.id) + " does not match request id " +
                        std::to_string(req.id));
  }
  if (resp.error) throw CalculatorError("adapter error: " + *resp.error);
  CalculatorResult out;
  if (!resp.energy || !std::isfinite(*resp.energy)) throw ProtocolError("non-finite or missing energy_ev");
  out.energy = *resp.energy;
  auto wants = [&](const char* p) {
    for (const auto& q : req.properties) {
      if (q == p) return true;
    }
    return false;
  };
  if (wants("forces")) {
    if (!resp.forces) throw ProtocolError("forces requested but \"forces_ev_ang\" missing");
    if (resp.forces->size() != req.elements.size()) throw ProtocolError("forces_ev_ang length mismatch");
    out.forces = resp.forces;
  }
  if (wants("dipole")) {
    if (!resp.dipole) throw ProtocolError("dipole requested but \"dipole_debye\" missing");
    out.dipole = resp.dipole;
  }
  return out;
}

}  // namespace molrl::protocol

namespace molrl {

namespace {
void ignore_sigpipe() {
  static std::once_flag flag;
  std::call_once(flag, [] { ::signal(SIGPIPE, SIG_IGN); });
}
}  // namespace

Subprocess::Subprocess(const std::string& command) {
  ignore_sigpipe();
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) throw CalculatorError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw CalculatorError(std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    throw CalculatorError(std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    // Own process group so that terminate() also reaches anything the shell spawned.
    ::setpgid(0, 0);
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
  pid_ = pid;
  in_fd_ = to_child[1];
  out_fd_ = from_child[0];
}

Subprocess::~Subprocess() { terminate(); }

void Subprocess::write_line(const std::string& line) {
  if (in_fd_ < 0) throw CalculatorError("adapter stdin closed");
  std::string data = line + '\n';
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(in_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw CalculatorError(std::string("write to adapter failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string Subprocess::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    if (out_fd_ < 0) throw CalculatorError("adapter stdout closed");
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw CalculatorError("adapter timed out after " + std::to_string(timeout.count()) + " ms");
    pollfd pfd{out_fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw CalculatorError(std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) continue;  // deadline re-checked above
    char chunk[4096];
    const ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw CalculatorError(std::string("read from adapter failed: ") + std::strerror(errno));
    }
    if (n == 0) throw CalculatorError("adapter exited (EOF on stdout)");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

bool Subprocess::running() {
  if (pid_ < 0 || reaped_) return false;
  int status = 0;
  const pid_t r = ::waitpid(pid_, &status, WNOHANG);
  if (r == pid_) {
    reaped_ = true;
    return false;
  }
  return true;
}

void Subprocess::terminate() {
  if (in_fd_ >= 0) {
    ::close(in_fd_);
    in_fd_ = -1;
  }
  if (out_fd_ >= 0) {
    ::close(out_fd_);
    out_fd_ = -1;
  }
  if (pid_ > 0) {
    // Closing stdin normally ends the adapter loop; escalate after a short grace period.
    for (int i = 0; i < 20 && running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    ::kill(-pid_, SIGKILL);
    if (!reaped_) {
      ::kill(pid_, SIGKILL);
      int status = 0;
      ::waitpid(pid_, &status, 0);
      reaped_ = true;
    }
    pid_ = -1;
  }
}

}  // namespace molrl
