#include "fsi2p/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace fsi2p {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("config: bad value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string_view name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field field(std::string_view name, T RunConfig::*member) {
  Field f;
  f.name = name;
  f.set = [name, member](RunConfig& c, std::string_view v) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = std::string(v);
    } else if constexpr (std::is_same_v<T, Ordering>) {
      c.*member = parse_ordering(v);
    } else if constexpr (std::is_same_v<T, SceneMode>) {
      c.*member = parse_scene_mode(v);
    } else {
      c.*member = parse_number<T>(name, v);
    }
  };
  f.get = [member](const RunConfig& c) -> std::string {
    if constexpr (std::is_same_v<T, std::string>) {
      return c.*member;
    } else if constexpr (std::is_same_v<T, Ordering> || std::is_same_v<T, SceneMode>) {
      return std::string(to_string(c.*member));
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_double(c.*member);
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      field("seed", &RunConfig::seed),
      field("dataset", &RunConfig::dataset),
      field("out", &RunConfig::out),
      field("count", &RunConfig::count),
      field("points", &RunConfig::points),
      field("height", &RunConfig::height),
      field("width", &RunConfig::width),
      field("input_channels", &RunConfig::input_channels),
      field("noise", &RunConfig::noise),
      field("mode", &RunConfig::mode),
      field("repetition_groups", &RunConfig::repetition_groups),
      field("max_rotation_deg", &RunConfig::max_rotation_deg),
      field("max_translation", &RunConfig::max_translation),
      field("channels", &RunConfig::channels),
      field("state_dim", &RunConfig::state_dim),
      field("embedding_levels", &RunConfig::embedding_levels),
      field("heads", &RunConfig::heads),
      field("modulation_hidden", &RunConfig::modulation_hidden),
      field("policy_hidden", &RunConfig::policy_hidden),
      field("fine_channels", &RunConfig::fine_channels),
      field("coarse_pool", &RunConfig::coarse_pool),
      field("window_a", &RunConfig::window_a),
      field("window_b", &RunConfig::window_b),
      field("window_c", &RunConfig::window_c),
      field("ordering", &RunConfig::ordering),
      field("top_k", &RunConfig::top_k),
      field("tau", &RunConfig::tau),
      field("radius", &RunConfig::radius),
      field("zeta", &RunConfig::zeta),
      field("delta_p", &RunConfig::delta_p),
      field("delta_n", &RunConfig::delta_n),
      field("xi1", &RunConfig::xi1),
      field("xi2", &RunConfig::xi2),
      field("reward_delta", &RunConfig::reward_delta),
      field("baseline_momentum", &RunConfig::baseline_momentum),
      field("fixed_depth", &RunConfig::fixed_depth),
      field("ransac_iterations", &RunConfig::ransac_iterations),
      field("ransac_threshold", &RunConfig::ransac_threshold),
      field("steps", &RunConfig::steps),
      field("lr", &RunConfig::lr),
      field("policy_lr", &RunConfig::policy_lr),
      field("momentum", &RunConfig::momentum),
      field("grad_clip", &RunConfig::grad_clip),
      field("checkpoint_every", &RunConfig::checkpoint_every),
      field("eval_split", &RunConfig::eval_split),
      field("mmd_bandwidth", &RunConfig::mmd_bandwidth),
      field("bench_repeats", &RunConfig::bench_repeats),
      field("bench_points", &RunConfig::bench_points),
  };
  return f;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

}  // namespace

SceneSpec RunConfig::scene_spec() const {
  SceneSpec s;
  s.points = points;
  s.height = height;
  s.width = width;
  s.channels = input_channels;
  s.noise = noise;
  s.mode = mode;
  s.repetition_groups = repetition_groups;
  s.max_rotation = max_rotation_deg * M_PI / 180.0;
  s.max_translation = max_translation;
  return s;
}

void RunConfig::validate() const {
  scene_spec().validate();
  require(count >= 1, "count must be positive");
  require(channels >= 1 && heads >= 1 && channels % heads == 0, "channels must be divisible by heads");
  require(state_dim >= 1, "state_dim must be positive");
  require(embedding_levels >= 1, "embedding_levels must be positive");
  require(modulation_hidden >= 1 && policy_hidden >= 1 && fine_channels >= 1, "hidden widths must be positive");
  require(coarse_pool >= 1 && height % coarse_pool == 0 && width % coarse_pool == 0,
          "coarse_pool must divide the image grid");
  const Index ch = height / coarse_pool, cw = width / coarse_pool;
  require(ch % 4 == 0 && cw % 4 == 0, "coarse grid must be divisible by 4");
  const Index windows[] = {window_a, window_b, window_c};
  for (int l = 0; l < 3; ++l) {
    const Index lh = ch >> l, lw = cw >> l, o = windows[l];
    require(o >= 1 && lh % o == 0 && lw % o == 0,
            "window " + std::to_string(o) + " does not tile level " + std::to_string(l) + " (" +
                std::to_string(lh) + "x" + std::to_string(lw) + ")");
  }
  require(top_k >= 1, "top_k must be positive");
  require(radius > 0, "radius must be positive");
  require(zeta > 0, "zeta must be positive");
  require(delta_p < delta_n, "delta_p must be below delta_n");
  require(xi1 >= 0 && xi2 >= 0, "xi weights must be non-negative");
  require(reward_delta > 0, "reward_delta must be positive");
  require(baseline_momentum > 0 && baseline_momentum <= 1, "baseline_momentum must lie in (0, 1]");
  require(fixed_depth >= -1 && fixed_depth <= kMaxDepth, "fixed_depth must be -1 or 0..3");
  require(ransac_iterations >= 1 && ransac_threshold > 0, "invalid RANSAC settings");
  require(steps >= 0, "steps must be non-negative");
  require(lr >= 0 && policy_lr >= 0, "learning rates must be non-negative");
  require(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
  require(grad_clip >= 0, "grad_clip must be non-negative");
  require(checkpoint_every >= 0, "checkpoint_every must be non-negative");
  require(eval_split == "train" || eval_split == "val" || eval_split == "test",
          "eval_split must be train, val or test");
  require(mmd_bandwidth > 0, "mmd_bandwidth must be positive");
  require(bench_repeats >= 1 && bench_points >= 1, "invalid bench settings");
}

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (f.name == key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const Field& f : fields()) {
    out += std::string(f.name) + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace fsi2p
