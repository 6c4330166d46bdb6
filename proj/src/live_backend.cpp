// Copyright 2026 The pitl Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>

#include <httplib.h>

#include "pitl/promptgen.hpp"

namespace pitl::promptgen {

LiveBackend::LiveBackend(LiveBackendConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw BackendError("live backend needs an endpoint (PITL_LLM_ENDPOINT)");
}

LiveBackend LiveBackend::from_environment(BackendConfig backend) {
  LiveBackendConfig cfg;
  if (const char* e = std::getenv("PITL_LLM_ENDPOINT")) cfg.endpoint = e;
  if (const char* k = std::getenv("PITL_LLM_API_KEY")) cfg.api_key = k;
  if (const char* m = std::getenv("PITL_LLM_MODEL")) cfg.model = m;
  cfg.backend = backend;
  return LiveBackend(std::move(cfg));
}

std::string LiveBackend::complete(const std::string& prompt, int sample_index) {
  httplib::Client client(config_.endpoint);
  const auto timeout = config_.backend.timeout;
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                                static_cast<long>((timeout.count() % 1000) * 1000));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout).count(),
                          static_cast<long>((timeout.count() % 1000) * 1000));

  nlohmann::json body{{"model", config_.model},
                      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
                      {"n", 1},
                      {"user", "pitl-sample-" + std::to_string(sample_index)}};
  if (config_.backend.temperature) body["temperature"] = *config_.backend.temperature;
  if (config_.backend.max_tokens) body["max_tokens"] = *config_.backend.max_tokens;

  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);
  auto res = client.Post(config_.path, headers, body.dump(), "application/json");
  if (!res) throw BackendError("request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw BackendError("backend returned HTTP " + std::to_string(res->status));

  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded()) throw BackendError("backend returned malformed JSON");
  const auto& choices = reply.value("choices", nlohmann::json::array());
  if (choices.empty()) return {};
  const auto& choice = choices.at(0);
  if (choice.contains("message")) return choice["message"].value("content", "");
  return choice.value("text", "");
}

}  // namespace pitl::promptgen
