#include "metasched/checkpoint.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "metasched/io.hpp"

namespace metasched::mlrsnet {

using nlohmann::json;

std::string to_json_text(const Checkpoint& checkpoint) {
  const Params& params = checkpoint.params;
  json blocks = json::object();
  for (std::size_t b = 0; b < kBlockCount; ++b) {
    const auto block = static_cast<Block>(b);
    const BlockShape shape = params.shape(block);
    const auto values = params.block(block);
    json array = json::array();
    if (shape.is_matrix()) {
      for (std::size_t r = 0; r < shape.rows; ++r) {
        const auto row = values.subspan(r * shape.cols, shape.cols);
        array.push_back(json(std::vector<double>(row.begin(), row.end())));
      }
    } else {
      array = json(std::vector<double>(values.begin(), values.end()));
    }
    blocks[std::string(kBlockNames[b])] = std::move(array);
  }

  json doc;
  doc["format_version"] = checkpoint.format_version;
  doc["hidden_size"] = params.hidden_size();
  doc["gamma"] = params.gamma();
  doc["params"] = std::move(blocks);
  doc["step"] = checkpoint.step;
  doc["seed"] = checkpoint.seed;
  doc["config_hash"] = checkpoint.config_hash;
  return doc.dump(1) + "\n";
}

namespace {

[[noreturn]] void schema_error(const std::string& what) {
  throw ParseError("checkpoint: " + what, 0);
}

const json& require(const json& doc, const char* key) {
  const auto it = doc.find(key);
  if (it == doc.end()) schema_error(std::string("missing field '") + key + "'");
  return *it;
}

void read_numbers(const json& array, std::span<double> out, const std::string& name) {
  if (!array.is_array() || array.size() != out.size()) schema_error("block '" + name + "' has the wrong length");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!array[i].is_number()) schema_error("block '" + name + "' contains a non-number");
    out[i] = array[i].get<double>();
  }
}

}  // namespace

Checkpoint parse_checkpoint(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte counts characters read, so the offending one sits at e.byte - 1
    const std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    throw ParseError("checkpoint: malformed JSON at byte " + std::to_string(offset) + ": " + e.what(), offset);
  }
  if (!doc.is_object()) schema_error("top level must be an object");

  try {
    const int version = require(doc, "format_version").get<int>();
    if (version != kCheckpointFormatVersion) throw IncompatibleVersionError(version, kCheckpointFormatVersion);

    const auto hidden = require(doc, "hidden_size").get<std::size_t>();
    const auto gamma = require(doc, "gamma").get<double>();
    if (hidden == 0) schema_error("hidden_size must be positive");

    Params params = Params::zeros(hidden, 1.0);
    params.set_gamma(gamma);
    const json& blocks = require(doc, "params");
    for (std::size_t b = 0; b < kBlockCount; ++b) {
      const auto block = static_cast<Block>(b);
      const std::string name(kBlockNames[b]);
      const json& array = require(blocks, name.c_str());
      const BlockShape shape = params.shape(block);
      auto values = params.mutable_block(block);
      if (shape.is_matrix()) {
        if (!array.is_array() || array.size() != shape.rows) schema_error("block '" + name + "' has the wrong row count");
        for (std::size_t r = 0; r < shape.rows; ++r) {
          read_numbers(array[r], values.subspan(r * shape.cols, shape.cols), name);
        }
      } else {
        read_numbers(array, values, name);
      }
    }

    Checkpoint out{version, Params(hidden, gamma, std::vector<double>(params.theta().begin(), params.theta().end())),
                   require(doc, "step").get<std::int64_t>(), require(doc, "seed").get<std::uint64_t>(),
                   require(doc, "config_hash").get<std::string>()};
    return out;
  } catch (const json::exception& e) {
    schema_error(e.what());
  } catch (const DomainError& e) {
    schema_error(e.what());
  }
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  write_file_atomic(path, to_json_text(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

}  // namespace metasched::mlrsnet
