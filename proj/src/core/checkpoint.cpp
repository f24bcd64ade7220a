#include "core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "core/errors.hpp"

namespace spsd {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[] = "SPSDCKPT1\n";
constexpr std::size_t kMagicSize = sizeof(kMagic) - 1;

void append_tensors(const ParameterSet<float>& set, const std::string& prefix, const std::string& group,
                    json& index, std::string& payload) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& m = set[i];
    index.push_back({{"name", prefix + set.name(i)},
                     {"group", group},
                     {"shape", {m.rows(), m.cols()}},
                     {"offset", payload.size()}});
    payload.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  json index = json::array();
  std::string payload;
  append_tensors(ck.params, "", "param", index, payload);
  json header = {{"format", 1},
                 {"dtype", "float32"},
                 {"network", to_json(ck.network)},
                 {"step", ck.step},
                 {"extra", ck.extra}};
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    append_tensors(o.first_moment, "adam.m.", "adam.m", index, payload);
    append_tensors(o.second_moment, "adam.v.", "adam.v", index, payload);
    header["optimizer"] = {{"name", "adamw"},
                           {"lr", o.options.lr},
                           {"beta1", o.options.beta1},
                           {"beta2", o.options.beta2},
                           {"eps", o.options.eps},
                           {"weight_decay", o.options.weight_decay},
                           {"steps", o.steps}};
  }
  header["tensors"] = index;
  header["payload_bytes"] = payload.size();
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write checkpoint " + tmp.string());
    out.write(kMagic, kMagicSize);
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) fail(ErrorKind::Io, "failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  char magic[kMagicSize];
  in.read(magic, kMagicSize);
  if (!in || std::memcmp(magic, kMagic, kMagicSize) != 0)
    fail(ErrorKind::Io, path.string() + " is not a checkpoint");
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) fail(ErrorKind::Io, path.string() + ": truncated header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, path.string() + ": corrupt header: " + e.what());
  }
  const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
  std::string payload(payload_bytes, '\0');
  in.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
  if (!in) fail(ErrorKind::Io, path.string() + ": truncated payload");

  Checkpoint ck;
  try {
    ck.network = parse_network_config(header.at("network"));
    ck.step = header.at("step").get<std::int64_t>();
    ck.extra = header.value("extra", json::object());
    ParameterSet<float> m, v;
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto group = t.at("group").get<std::string>();
      const int rows = t.at("shape")[0].get<int>();
      const int cols = t.at("shape")[1].get<int>();
      const auto offset = t.at("offset").get<std::size_t>();
      const std::size_t bytes = static_cast<std::size_t>(rows) * cols * sizeof(float);
      if (offset + bytes > payload.size()) fail(ErrorKind::Io, path.string() + ": tensor " + name + " out of range");
      ParameterSet<float>* target = &ck.params;
      std::string key = name;
      if (group == "adam.m") {
        target = &m;
        key = name.substr(std::strlen("adam.m."));
      } else if (group == "adam.v") {
        target = &v;
        key = name.substr(std::strlen("adam.v."));
      }
      const auto i = target->add(key, rows, cols);
      std::memcpy((*target)[i].data(), payload.data() + offset, bytes);
    }
    if (header.contains("optimizer")) {
      const auto& o = header.at("optimizer");
      OptimizerSnapshot snap;
      snap.options.lr = o.at("lr").get<double>();
      snap.options.beta1 = o.at("beta1").get<double>();
      snap.options.beta2 = o.at("beta2").get<double>();
      snap.options.eps = o.at("eps").get<double>();
      snap.options.weight_decay = o.at("weight_decay").get<double>();
      snap.steps = o.at("steps").get<std::int64_t>();
      snap.first_moment = std::move(m);
      snap.second_moment = std::move(v);
      ck.optimizer = std::move(snap);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, path.string() + ": corrupt header: " + e.what());
  }
  return ck;
}

}  // namespace spsd
