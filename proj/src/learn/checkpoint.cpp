#include <bit>
#include <fstream>
#include <sstream>

#include "repval/errors.hpp"
#include "repval/learn.hpp"

namespace repval::learn {

namespace {

constexpr const char* kMagic = "RVCKPT";
constexpr const char* kAttnMagic = "ATTNCKPT";

void write_doubles(std::ostream& os, std::span<const double> values) {
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    os.write(bytes, 8);
  }
}

void read_doubles(std::istream& is, std::vector<double>& out) {
  for (auto& v : out) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8))
      throw CheckpointError("checkpoint: truncated attention block");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
  }
}

std::string expect_line(std::istream& is, const std::string& what) {
  std::string line;
  if (!std::getline(is, line)) throw CheckpointError("checkpoint: missing " + what);
  return line;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

void save_checkpoint(Learner& learner, const std::filesystem::path& path, const CheckpointMeta& meta) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto sections = learner.sections();
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
    os << kMagic << " v1 " << to_string(learner.variant()) << ' ' << sections.size() << '\n';
    for (const auto& [name, net] : sections) {
      os << "SECTION " << name << '\n';
      nn::write_checkpoint(os, *net);
    }
    if (const auto* att = learner.attention()) {
      os << kAttnMagic << " v1 " << att->feature_dim << ',' << att->embed_dim << '\n';
      write_doubles(os, att->W);
      write_doubles(os, att->a);
    }
    if (!os) throw CheckpointError("failed writing checkpoint: " + path.string());
  }
  nlohmann::json side{{"learner", to_json(learner.config())},
                      {"env", to_json(meta.env)},
                      {"seed", meta.seed},
                      {"episode", meta.episode}};
  std::ofstream js(sidecar_path(path));
  if (!js) throw CheckpointError("cannot open sidecar for writing: " + sidecar_path(path).string());
  js << side.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto side_path = sidecar_path(path);
  if (!std::filesystem::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  if (!std::filesystem::exists(side_path))
    throw CheckpointError("checkpoint sidecar not found: " + side_path.string());

  LoadedCheckpoint out;
  LearnerConfig cfg;
  try {
    std::ifstream js(side_path);
    const auto side = nlohmann::json::parse(js);
    cfg = learner_config_from_json(side.at("learner"));
    out.meta.env = grid_config_from_json(side.at("env"));
    out.meta.seed = side.at("seed").get<std::uint64_t>();
    out.meta.episode = side.at("episode").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint sidecar: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint sidecar: ") + e.what());
  }
  out.learner = make_learner(cfg);

  std::ifstream is(path, std::ios::binary);
  std::istringstream header(expect_line(is, "header"));
  std::string magic, version, variant;
  std::size_t count = 0;
  header >> magic >> version >> variant >> count;
  if (magic != kMagic || version != "v1") throw CheckpointError("checkpoint: bad header in " + path.string());
  if (variant != to_string(cfg.variant))
    throw CheckpointError("checkpoint: variant " + variant + " does not match sidecar " +
                          std::string(to_string(cfg.variant)));

  auto sections = out.learner->sections();
  if (count != sections.size()) throw CheckpointError("checkpoint: unexpected section count");
  for (auto& [name, net] : sections) {
    const auto line = expect_line(is, "section " + name);
    if (line != "SECTION " + name)
      throw CheckpointError("checkpoint: expected section " + name + ", found '" + line + "'");
    auto loaded = nn::read_checkpoint(is);
    if (!loaded.congruent(*net)) throw CheckpointError("checkpoint: section " + name + " has wrong shape");
    *net = std::move(loaded);
  }

  if (auto* att = out.learner->mutable_attention()) {
    std::istringstream ah(expect_line(is, "attention block"));
    std::string am, av, dims;
    ah >> am >> av >> dims;
    const std::string want = std::to_string(att->feature_dim) + "," + std::to_string(att->embed_dim);
    if (am != kAttnMagic || av != "v1" || dims != want)
      throw CheckpointError("checkpoint: bad attention block header");
    read_doubles(is, att->W);
    read_doubles(is, att->a);
  }
  return out;
}

}  // namespace repval::learn
