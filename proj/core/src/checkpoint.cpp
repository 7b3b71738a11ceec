#include "magnet/checkpoint.hpp"

#include <cstring>
#include <sstream>

#include "json.hpp"
#include "magnet/checksum.hpp"

namespace magnet {

namespace {

using nlohmann::ordered_json;

constexpr char kMagic[4] = {'M', 'G', 'N', 'T'};
constexpr const char* kSections[4] = {"params", "best_params", "adam_m", "adam_v"};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_++])) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > in_.size() - pos_) throw CheckpointError("checkpoint truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

void write_store(Writer& w, const ParamStore& store) {
  w.u64(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Tensor& t = store.tensors()[i];
    w.str(store.names()[i]);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
}

ParamStore read_store(Reader& r) {
  ParamStore store;
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw CheckpointError("bad tensor rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = r.f64();
    try {
      store.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    } catch (const std::exception& e) {
      throw CheckpointError(std::string("corrupt tensor: ") + e.what());
    }
  }
  return store;
}

std::string tensor_checksum(const Tensor& t) {
  Writer w;
  for (double v : t.data()) w.f64(v);
  return checksum_string(w.data());
}

}  // namespace

std::string config_checksum(const ModelConfig& model, const TrainConfig& train) {
  // The stopping rule does not change the trajectory of completed epochs, so a
  // run may be extended with a larger budget or patience.
  TrainConfig trajectory = train;
  trajectory.max_epochs = TrainConfig{}.max_epochs;
  trajectory.patience = TrainConfig{}.patience;
  return checksum_string(to_json(model) + "\n" + to_json(trajectory));
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".manifest");
}

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  ordered_json header;
  header["model"] = ordered_json::parse(to_json(s.model));
  header["train"] = ordered_json::parse(to_json(s.train));
  header["config_checksum"] = config_checksum(s.model, s.train);
  header["optimizer_steps"] = s.optimizer_steps;
  header["best_epoch"] = s.best_epoch;
  header["best_val_accuracy"] = s.best_val_accuracy;
  header["finished"] = s.finished;
  ordered_json history = ordered_json::array();
  for (const EpochRecord& e : s.history) {
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"train_accuracy", e.train_accuracy},
                       {"val_loss", e.val_loss},
                       {"val_accuracy", e.val_accuracy}});
  }
  header["history"] = history;

  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.str(header.dump());
  const ParamStore* stores[4] = {&s.params, &s.best_params, &s.adam_m, &s.adam_v};
  for (const ParamStore* store : stores) write_store(w, *store);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file(path, w.data());

  std::ostringstream m;
  m << "magnet-checkpoint " << kCheckpointVersion << "\n";
  m << "file " << checksum_string(w.data()) << "\n";
  m << "config " << header["config_checksum"].get<std::string>() << "\n";
  for (int k = 0; k < 4; ++k) {
    const ParamStore& store = *stores[k];
    for (std::size_t i = 0; i < store.size(); ++i) {
      m << kSections[k] << " " << store.names()[i] << " " << shape_str(store.tensors()[i].shape()) << " "
        << tensor_checksum(store.tensors()[i]) << "\n";
    }
  }
  write_file(manifest_path(path), m.str());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const std::runtime_error& e) {
    throw CheckpointError(e.what());
  }
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError(path.string() + ": not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  TrainState s;
  try {
    const auto header = nlohmann::json::parse(r.str());
    s.model = model_config_from_json(header.at("model").dump());
    s.train = train_config_from_json(header.at("train").dump());
    if (header.at("config_checksum").get<std::string>() != config_checksum(s.model, s.train)) {
      throw CheckpointError(path.string() + ": header config checksum mismatch");
    }
    s.optimizer_steps = header.at("optimizer_steps").get<std::uint64_t>();
    s.best_epoch = header.at("best_epoch").get<std::size_t>();
    s.best_val_accuracy = header.at("best_val_accuracy").get<double>();
    s.finished = header.at("finished").get<bool>();
    for (const auto& e : header.at("history")) {
      s.history.push_back(EpochRecord{e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                                      e.at("train_accuracy").get<double>(), e.at("val_loss").get<double>(),
                                      e.at("val_accuracy").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed header: " + e.what());
  }
  s.params = read_store(r);
  s.best_params = read_store(r);
  s.adam_m = read_store(r);
  s.adam_v = read_store(r);
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes");
  const ParamStore expected = init_model(s.model);
  for (const ParamStore* store : {&s.params, &s.best_params, &s.adam_m, &s.adam_v}) {
    if (store->names() != expected.names()) throw CheckpointError(path.string() + ": parameter names disagree with config");
    for (std::size_t i = 0; i < store->size(); ++i) {
      if (store->tensors()[i].shape() != expected.tensors()[i].shape()) {
        throw CheckpointError(path.string() + ": shape mismatch for " + store->names()[i]);
      }
    }
  }
  return s;
}

TrainState resume_checkpoint(const std::filesystem::path& path, const ModelConfig& model, const TrainConfig& train) {
  TrainState s = load_checkpoint(path);
  const std::string want = config_checksum(model, train);
  const std::string have = config_checksum(s.model, s.train);
  if (want != have) {
    throw CheckpointError("refusing to resume " + path.string() + ": config checksum " + have +
                          " does not match the requested " + want);
  }
  s.train = train;
  if (!s.history.empty()) {
    const std::size_t epoch = s.history.back().epoch;
    s.finished = epoch >= train.max_epochs || epoch - s.best_epoch >= train.patience;
  }
  return s;
}

}  // namespace magnet
