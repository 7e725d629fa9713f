#include <fstream>

#include "binary_io.hpp"
#include "rja/trainer.hpp"

namespace rja {

namespace {

void write_state(const TrainerState& s, KeyValues& kv) {
  kv["state.epoch"] = std::to_string(s.epoch);
  kv["state.step_in_epoch"] = std::to_string(s.step_in_epoch);
  kv["state.adam_step"] = std::to_string(s.adam_step);
  kv["state.epoch_loss_sum"] = format_double(s.epoch_loss_sum);
  kv["state.epoch_loss_count"] = std::to_string(s.epoch_loss_count);
  kv["state.best_val_ccc"] = format_double(s.best_val_ccc);
  kv["state.best_epoch"] = std::to_string(s.best_epoch);
  kv["state.bad_epochs"] = std::to_string(s.bad_epochs);
  kv["state.rng"] = s.rng_state;
  kv["state.stopped"] = s.stopped ? "1" : "0";
}

TrainerState read_state(const KeyValues& kv) {
  TrainerState s;
  s.epoch = static_cast<int>(get_int(kv, "state.epoch", 0));
  s.step_in_epoch = static_cast<std::size_t>(get_int(kv, "state.step_in_epoch", 0));
  s.adam_step = static_cast<long>(get_int(kv, "state.adam_step", 0));
  s.epoch_loss_sum = get_double(kv, "state.epoch_loss_sum", 0.0);
  s.epoch_loss_count = static_cast<std::size_t>(get_int(kv, "state.epoch_loss_count", 0));
  s.best_val_ccc = get_double(kv, "state.best_val_ccc", -2.0);
  s.best_epoch = static_cast<int>(get_int(kv, "state.best_epoch", 0));
  s.bad_epochs = static_cast<int>(get_int(kv, "state.bad_epochs", 0));
  s.rng_state = get_string(kv, "state.rng", "");
  s.stopped = get_bool(kv, "state.stopped", false);
  return s;
}

void write_record(binary::Writer& out, const std::string& name, const Matrix& m) {
  out.text(name);
  out.u32(static_cast<std::uint32_t>(m.rows()));
  out.u32(static_cast<std::uint32_t>(m.cols()));
  out.matrix(m);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const std::size_t n = ckpt.parameters.size();
  if (ckpt.moments.first.size() != n || ckpt.moments.second.size() != n)
    throw ContractError("checkpoint moments do not match its parameters");
  KeyValues kv;
  ckpt.model_config.write(kv);
  ckpt.train_config.write(kv);
  write_state(ckpt.state, kv);

  binary::Writer out;
  out.raw("RJAC");
  out.u16(kCheckpointVersion);
  out.text(format_key_values(kv));
  out.u32(static_cast<std::uint32_t>(3 * n));
  for (const auto& p : ckpt.parameters) write_record(out, p.name, p.tensor.value());
  for (std::size_t k = 0; k < n; ++k)
    write_record(out, "adam.m/" + ckpt.parameters[k].name, ckpt.moments.first[k]);
  for (std::size_t k = 0; k < n; ++k)
    write_record(out, "adam.v/" + ckpt.parameters[k].name, ckpt.moments.second[k]);
  return out.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  binary::Reader in(bytes);
  if (in.raw(4, "magic") != "RJAC") throw FormatError("bad magic, expected RJAC", 0);
  const auto version = in.u16("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported RJAC version " + std::to_string(version), 4);
  const std::size_t config_at = in.offset();
  const std::string text = in.text("config");

  Checkpoint ckpt;
  try {
    const KeyValues kv = parse_key_values(text);
    ckpt.model_config.read(kv);
    ckpt.model_config.validate();
    ckpt.train_config.read(kv);
    ckpt.state = read_state(kv);
  } catch (const Error& e) {
    throw FormatError(std::string("bad checkpoint config: ") + e.what(), config_at);
  }

  const std::size_t count_at = in.offset();
  const std::uint32_t count = in.u32("record count");
  if (count % 3 != 0) throw FormatError("record count is not a multiple of 3", count_at);
  const std::size_t n = count / 3;
  std::vector<std::pair<std::string, Matrix>> records;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::string tag = "record " + std::to_string(r);
    std::string name = in.text(tag + " name");
    const Eigen::Index rows = in.u32(tag + " rows");
    const Eigen::Index cols = in.u32(tag + " cols");
    records.emplace_back(std::move(name), in.matrix(rows, cols, tag + " data"));
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after records", in.offset());

  for (std::size_t k = 0; k < n; ++k) {
    const auto& [name, value] = records[k];
    const auto& m = records[n + k];
    const auto& v = records[2 * n + k];
    if (m.first != "adam.m/" + name || v.first != "adam.v/" + name)
      throw FormatError("optimizer records out of order for " + name, count_at);
    ckpt.parameters.push_back({name, Tensor(value, true)});
    ckpt.moments.first.push_back(m.second);
    ckpt.moments.second.push_back(v.second);
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace rja
