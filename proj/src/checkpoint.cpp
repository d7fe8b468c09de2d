#include "gridflow/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "gridflow/metrics.hpp"

namespace gridflow {
namespace {

constexpr const char* kMagic = "gridflow-checkpoint";
constexpr int kVersion = 1;

double parse_double_token(const std::string& token, const char* what) {
  double value = 0.0;
  const auto res =
      std::from_chars(token.data(), token.data() + token.size(), value);
  if (res.ec != std::errc{} || res.ptr != token.data() + token.size())
    throw IoError(std::string("checkpoint: malformed ") + what + " '" + token + "'");
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const FlowParams& params,
                     const Hypergrid& env) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");

  out << kMagic << " v" << kVersion << '\n';
  out << "dim " << env.dim() << '\n';
  out << "horizon " << env.horizon() << '\n';
  out << "r0 " << format_double(env.r0()) << '\n';
  out << "closure "
      << (env.closure() == IntervalClosure::kOpen ? "open" : "half-open")
      << '\n';
  out << "backward "
      << (params.backward_mode == BackwardMode::kUniform ? "uniform" : "learned")
      << '\n';
  out << "log_z " << format_double(params.log_z) << '\n';
  for (StateIndex s = 0; s < env.num_states(); ++s) {
    out << "state " << s << ' ' << format_double(params.log_state_flow[s]);
    for (double logit : params.logits_of(s)) out << ' ' << format_double(logit);
    if (params.backward_mode == BackwardMode::kLearned) {
      out << " |";
      const std::uint64_t off = params.layout->parent_off[s];
      const int count = env.num_parents(s);
      for (int i = 0; i < count; ++i)
        out << ' ' << format_double(params.back_logits[off + static_cast<std::uint64_t>(i)]);
    }
    out << '\n';
  }
  if (!out) throw IoError("checkpoint: write to '" + path + "' failed");
}

FlowParams load_checkpoint(const std::string& path, const Hypergrid& env) {
  std::ifstream in(path);
  if (!in) throw IoError("checkpoint: cannot open '" + path + "'");

  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line))
      throw IoError(std::string("checkpoint: truncated file, missing ") + what);
    return std::istringstream(line);
  };
  auto expect_key = [&](std::istringstream& ss, const std::string& key) {
    std::string token;
    ss >> token;
    if (token != key)
      throw IoError("checkpoint: expected '" + key + "', got '" + token + "'");
  };

  {
    auto ss = next_line("header");
    std::string magic, version;
    ss >> magic >> version;
    if (magic != kMagic || version != "v1")
      throw IoError("checkpoint: unrecognized header '" + line + "'");
  }

  int dim = 0, horizon = 0;
  std::string r0_token, closure_token, backward_token, logz_token;
  {
    auto ss = next_line("dim");
    expect_key(ss, "dim");
    ss >> dim;
  }
  {
    auto ss = next_line("horizon");
    expect_key(ss, "horizon");
    ss >> horizon;
  }
  {
    auto ss = next_line("r0");
    expect_key(ss, "r0");
    ss >> r0_token;
  }
  {
    auto ss = next_line("closure");
    expect_key(ss, "closure");
    ss >> closure_token;
  }
  {
    auto ss = next_line("backward");
    expect_key(ss, "backward");
    ss >> backward_token;
  }
  {
    auto ss = next_line("log_z");
    expect_key(ss, "log_z");
    ss >> logz_token;
  }

  const double r0 = parse_double_token(r0_token, "r0");
  const IntervalClosure closure = closure_token == "open"
                                      ? IntervalClosure::kOpen
                                      : IntervalClosure::kHalfOpen;
  if (dim != env.dim() || horizon != env.horizon() || r0 != env.r0() ||
      closure != env.closure())
    throw ConfigError(
        "checkpoint: environment fingerprint mismatch (file has dim=" +
        std::to_string(dim) + " horizon=" + std::to_string(horizon) +
        " r0=" + r0_token + " closure=" + closure_token + ")");

  const BackwardMode mode = backward_token == "learned" ? BackwardMode::kLearned
                                                        : BackwardMode::kUniform;
  FlowParams params = init_params(env, InitScheme::kZeros, mode);
  params.log_z = parse_double_token(logz_token, "log_z");

  for (StateIndex s = 0; s < env.num_states(); ++s) {
    auto ss = next_line("state row");
    expect_key(ss, "state");
    StateIndex index = 0;
    ss >> index;
    if (index != s)
      throw IoError("checkpoint: state rows out of order at " + std::to_string(s));
    std::string token;
    ss >> token;
    params.log_state_flow[s] = parse_double_token(token, "log flow");
    for (double& logit : params.logits_of(s)) {
      ss >> token;
      logit = parse_double_token(token, "logit");
    }
    if (mode == BackwardMode::kLearned) {
      ss >> token;
      if (token != "|") throw IoError("checkpoint: missing backward separator");
      const std::uint64_t off = params.layout->parent_off[s];
      const int count = env.num_parents(s);
      for (int i = 0; i < count; ++i) {
        ss >> token;
        params.back_logits[off + static_cast<std::uint64_t>(i)] =
            parse_double_token(token, "backward logit");
      }
    }
    if (!ss) throw IoError("checkpoint: short state row at " + std::to_string(s));
  }
  return params;
}

}  // namespace gridflow
