#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 128
#endif
#include "httplib.h"
#include "json.hpp"

#include "leafgraph/error.hpp"
#include "leafgraph/explain.hpp"
#include "leafgraph/metrics.hpp"
#include "leafgraph/model.hpp"

namespace leafgraph {

struct HttpReply {
  int status = 200;
  std::string body;
};

// Request handling over an immutable model snapshot. handle() is const and safe to call
// from any number of threads.
class InferenceService {
 public:
  explicit InferenceService(std::shared_ptr<const GraphModel> model) : model_(std::move(model)) {
    if (!model_) throw ConfigError("service: no model");
    if (model_->train_ids().empty()) throw ConfigError("service: checkpoint has no training rows");
  }

  const GraphModel& model() const { return *model_; }

  HttpReply handle(std::string_view method, std::string_view path, std::string_view body) const {
    try {
      if (path == "/health") return expect(method, "GET", [&] { return ok({{"status", "ok"}}); });
      if (path == "/v1/model") return expect(method, "GET", [&] { return model_info(); });
      if (path == "/v1/predict") return expect(method, "POST", [&] { return predict(parse_body(body)); });
      if (path == "/v1/explain") return expect(method, "POST", [&] { return explain(parse_body(body)); });
      return error(404, "no route for " + std::string(path));
    } catch (const BadRequest& e) {
      return error(400, e.what());
    } catch (const ShapeError& e) {
      return error(422, e.what());
    } catch (const RangeError& e) {
      return error(422, e.what());
    } catch (const std::exception& e) {
      return error(500, e.what());
    }
  }

  // Blocks until stop() is called on the returned server or binding fails (IoError).
  void serve(httplib::Server& server, const std::string& host, int port) const {
    auto route = [this](const httplib::Request& req, httplib::Response& res) {
      const auto reply = handle(req.method, req.path, req.body);
      res.status = reply.status;
      res.set_content(reply.body, "application/json");
    };
    server.Get("/.*", route);
    server.Post("/.*", route);
    if (!server.bind_to_port(host, port)) {
      throw IoError("service: cannot bind " + host + ":" + std::to_string(port));
    }
    server.listen_after_bind();
  }

 private:
  struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
  };
  using Json = nlohmann::ordered_json;

  template <typename F>
  HttpReply expect(std::string_view method, std::string_view want, F&& f) const {
    if (method != want) return error(405, "method " + std::string(method) + " not allowed");
    return f();
  }

  static HttpReply ok(const Json& j) { return {200, j.dump()}; }
  static HttpReply error(int status, const std::string& msg) { return {status, Json{{"error", msg}}.dump()}; }

  static Json parse_body(std::string_view body) {
    Json j = Json::parse(body.begin(), body.end(), nullptr, false);
    if (j.is_discarded()) throw BadRequest("request body is not valid JSON");
    if (!j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
  }

  static std::vector<double> reals(const Json& j, const char* field) {
    if (!j.contains(field)) throw BadRequest(std::string("missing field '") + field + "'");
    const auto& a = j.at(field);
    if (!a.is_array()) throw BadRequest(std::string("field '") + field + "' must be an array");
    std::vector<double> out;
    out.reserve(a.size());
    for (const auto& v : a) {
      if (!v.is_number()) throw BadRequest(std::string("field '") + field + "' must hold numbers");
      const double d = v.get<double>();
      if (!std::isfinite(d)) throw BadRequest(std::string("field '") + field + "' must be finite");
      out.push_back(d);
    }
    return out;
  }

  HttpReply model_info() const {
    Json j;
    j["arch"] = to_string(model_->config().arch);
    j["classes"] = model_->class_table();
    j["param_count"] = model_->parameter_count();
    j["theta"] = round_sig9(model_->config().theta);
    return ok(j);
  }

  HttpReply predict(const Json& req) const {
    const auto x = reals(req, "features");
    const auto p = model_->predict_one(x);  // ShapeError -> 422
    Json j;
    j["predicted"] = model_->class_table()[p.predicted];
    Json probs = Json::object();
    for (std::size_t k = 0; k < p.probs.size(); ++k) probs[model_->class_table()[k]] = round_sig9(p.probs[k]);
    j["probs"] = std::move(probs);
    Json nb = Json::array();
    for (std::size_t i = 0; i < p.neighbors.nodes.size(); ++i) {
      nb.push_back({{"id", model_->train_ids()[p.neighbors.nodes[i]]},
                    {"similarity", round_sig9(p.neighbors.similarity[i])}});
    }
    j["neighbors"] = std::move(nb);
    return ok(j);
  }

  HttpReply explain(const Json& req) const {
    const auto values = reals(req, "spatial");
    if (!req.contains("shape") || !req.at("shape").is_array() || req.at("shape").size() != 3)
      throw BadRequest("field 'shape' must be [H, W, C]");
    Shape shape;
    for (const auto& d : req.at("shape")) {
      if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) throw BadRequest("shape entries must be positive");
      shape.push_back(d.get<std::size_t>());
    }
    if (shape_volume(shape) != values.size()) {
      throw ShapeError("spatial has " + std::to_string(values.size()) + " values, shape " + shape_string(shape) +
                       " needs " + std::to_string(shape_volume(shape)));
    }
    CamSource method = CamSource::eigencam;
    if (req.contains("method")) {
      if (!req.at("method").is_string()) throw BadRequest("field 'method' must be a string");
      try {
        method = parse_cam_source(req.at("method").get<std::string>());
      } catch (const ConfigError& e) {
        throw BadRequest(e.what());
      }
    }
    Tensor map(shape, values);
    Heatmap h;
    if (method == CamSource::eigencam) {
      h = eigen_cam(map);
    } else {
      if (shape[2] != model_->input_dim()) {
        throw ShapeError("gradcam needs " + std::to_string(model_->input_dim()) + " channels, got " +
                         std::to_string(shape[2]));
      }
      std::size_t cls = 0;
      if (req.contains("class") && !req.at("class").is_null()) {
        const auto& c = req.at("class");
        if (c.is_number_unsigned()) {
          cls = c.get<std::size_t>();
          if (cls >= model_->num_classes()) throw RangeError("class index out of range");
        } else if (c.is_string()) {
          const auto& t = model_->class_table();
          auto it = std::find(t.begin(), t.end(), c.get<std::string>());
          if (it == t.end()) throw RangeError("unknown class '" + c.get<std::string>() + "'");
          cls = static_cast<std::size_t>(it - t.begin());
        } else {
          throw BadRequest("field 'class' must be an index or a label");
        }
      } else {
        cls = model_->predict_one(global_average_pool(map)).predicted;
      }
      h = grad_cam(*model_, map, cls);
    }
    Json heat = Json::array();
    for (double v : h.grid.values()) heat.push_back(round_sig9(v));
    return ok({{"heatmap", std::move(heat)}, {"degenerate", h.degenerate}});
  }

  std::shared_ptr<const GraphModel> model_;
};

}  // namespace leafgraph
