#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "vtt/core.hpp"

namespace vtt {

inline nlohmann::json sample_to_json(const VTTSample& s) {
  nlohmann::json states = nlohmann::json::array();
  for (const auto& st : s.states) {
    nlohmann::json j = {{"state_id", st.state_id}, {"source", st.source}};
    j["timestamp_sec"] =
        st.timestamp_sec ? nlohmann::json(*st.timestamp_sec) : nlohmann::json();
    states.push_back(std::move(j));
  }
  return {{"sample_id", s.sample_id},
          {"category", s.category},
          {"topic", s.topic},
          {"split", to_string(s.split)},
          {"states", std::move(states)},
          {"transformations", s.transformations}};
}

inline VTTSample sample_from_json(const nlohmann::json& j) {
  VTTSample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.category = j.at("category").get<std::string>();
  s.topic = j.at("topic").get<std::string>();
  s.split = parse_split(j.at("split").get<std::string>());
  for (const auto& js : j.at("states")) {
    StateRef st;
    st.state_id = js.at("state_id").get<std::string>();
    st.source = js.value("source", std::string{});
    if (js.contains("timestamp_sec") && !js["timestamp_sec"].is_null()) {
      st.timestamp_sec = js["timestamp_sec"].get<double>();
    }
    s.states.push_back(std::move(st));
  }
  s.transformations = j.at("transformations").get<std::vector<std::string>>();
  return s;
}

/// One sample per line. The whole manifest is validated before the file is
/// touched, so an invalid sample never leaves a partial file behind.
inline void write_manifest(const DatasetManifest& manifest,
                           const std::string& path) {
  manifest.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path + "' for writing");
  for (const auto& s : manifest.samples) {
    out << sample_to_json(s).dump() << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path + "'");
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + path + "'");
  std::vector<VTTSample> samples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      auto s = sample_from_json(nlohmann::json::parse(line));
      validate_sample(s);
      samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kParse, path + ":" + std::to_string(lineno) +
                                         ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.kind(),
                  path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  auto m = DatasetManifest::from_samples(std::move(samples));
  m.validate();
  return m;
}

}  // namespace vtt
