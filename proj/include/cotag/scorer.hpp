#pragma once

#include <cerrno>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "cotag/error.hpp"
#include "cotag/ngram_lm.hpp"

namespace cotag {

// Fluency scoring behind one interface: the native n-gram model, or an
// external child process speaking newline-delimited JSON on stdin/stdout.

class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual FluencyScore score(std::span<const std::string> tokens) = 0;

  // Whether score() may be called concurrently from several threads.
  virtual bool thread_safe() const { return false; }
};

class NgramScorer final : public Scorer {
 public:
  explicit NgramScorer(NgramLM lm) : lm_(std::move(lm)) {}

  FluencyScore score(std::span<const std::string> tokens) override {
    return lm_.score(tokens);
  }

  bool thread_safe() const override { return true; }

  const NgramLM& model() const { return lm_; }

 private:
  NgramLM lm_;
};

// Child-process scorer. Protocol: the child prints {"ready": true} on
// startup; each request is one line {"tokens": [...]}, each response one
// line {"logprob": <number>}. Any protocol violation, timeout, or child
// exit raises ScorerUnavailableError and permanently marks the scorer
// broken so callers can fall back to the native model.
class ExternalScorer final : public Scorer {
 public:
  struct Options {
    std::vector<std::string> command;
    int timeout_ms = 10000;
  };

  explicit ExternalScorer(Options opts) : opts_(std::move(opts)) {
    if (opts_.command.empty()) {
      throw ScorerUnavailableError("external scorer command is empty");
    }
    // A dead child must surface as a write error, not kill the process.
    static std::once_flag sigpipe_once;
    std::call_once(sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });
    spawn();
    try {
      nlohmann::json hello = read_json_line();
      if (!hello.is_object() || hello.value("ready", false) != true) {
        fail("handshake did not announce readiness: " + hello.dump());
      }
    } catch (...) {
      shutdown();
      throw;
    }
  }

  ~ExternalScorer() override { shutdown(); }

  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  FluencyScore score(std::span<const std::string> tokens) override {
    if (broken_) throw ScorerUnavailableError("external scorer is no longer usable");
    nlohmann::json request;
    request["tokens"] = std::vector<std::string>(tokens.begin(), tokens.end());
    write_line(request.dump());
    nlohmann::json response = read_json_line();
    if (!response.is_object() || !response.contains("logprob") ||
        !response["logprob"].is_number()) {
      fail("response lacks a numeric logprob field: " + response.dump());
    }
    double total = response["logprob"].get<double>();
    if (!std::isfinite(total)) fail("response logprob is not finite");
    FluencyScore s;
    s.total_logprob = total;
    if (!tokens.empty()) {
      s.per_token_logprob = total / static_cast<double>(tokens.size());
    }
    return s;
  }

 private:
  void spawn() {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0) {
      throw ScorerUnavailableError("pipe failed: " + std::string(std::strerror(errno)));
    }
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw ScorerUnavailableError("pipe failed: " + std::string(std::strerror(errno)));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      throw ScorerUnavailableError("fork failed: " + std::string(std::strerror(errno)));
    }
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
      std::vector<char*> argv;
      argv.reserve(opts_.command.size() + 1);
      for (auto& part : opts_.command) argv.push_back(part.data());
      argv.push_back(nullptr);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
  }

  [[noreturn]] void fail(const std::string& what) {
    broken_ = true;
    throw ScorerUnavailableError("external scorer: " + what);
  }

  void write_line(const std::string& payload) {
    std::string data = payload + "\n";
    std::size_t off = 0;
    while (off < data.size()) {
      ssize_t n = ::write(in_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        fail("write failed: " + std::string(std::strerror(errno)));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    auto deadline = std::chrono::steady_clock::now() +
                    std::chrono::milliseconds(opts_.timeout_ms);
    for (;;) {
      std::size_t nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        return line;
      }
      auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                           deadline - std::chrono::steady_clock::now())
                           .count();
      if (remaining <= 0) fail("timed out waiting for a response");
      pollfd pfd{out_fd_, POLLIN, 0};
      int rc = ::poll(&pfd, 1, static_cast<int>(remaining));
      if (rc < 0) {
        if (errno == EINTR) continue;
        fail("poll failed: " + std::string(std::strerror(errno)));
      }
      if (rc == 0) fail("timed out waiting for a response");
      char chunk[4096];
      ssize_t n = ::read(out_fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        fail("read failed: " + std::string(std::strerror(errno)));
      }
      if (n == 0) fail("child closed its output stream");
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  nlohmann::json read_json_line() {
    std::string line = read_line();
    nlohmann::json parsed = nlohmann::json::parse(line, nullptr, false);
    if (parsed.is_discarded()) fail("response is not valid JSON: " + line);
    return parsed;
  }

  void shutdown() noexcept {
    if (in_fd_ >= 0) {
      ::close(in_fd_);
      in_fd_ = -1;
    }
    if (pid_ > 0) {
      int status = 0;
      bool reaped = false;
      for (int i = 0; i < 50 && !reaped; ++i) {
        if (::waitpid(pid_, &status, WNOHANG) == pid_) {
          reaped = true;
          break;
        }
        ::poll(nullptr, 0, 10);
      }
      if (!reaped) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
      }
      pid_ = -1;
    }
    if (out_fd_ >= 0) {
      ::close(out_fd_);
      out_fd_ = -1;
    }
  }

  Options opts_;
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buf_;
  bool broken_ = false;
};

}  // namespace cotag
