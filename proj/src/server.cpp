#include "dash/server.hpp"

#include <chrono>

#include "httplib.h"

#include "dash/error.hpp"

using nlohmann::json;

namespace dash {

int http_status(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NotFound: return 404;
        case ErrorKind::Conflict: return 409;
        case ErrorKind::Validation: return 422;
        case ErrorKind::Data: return 422;
        case ErrorKind::Compute: return 500;
    }
    return 500;
}

namespace {

void send_error(httplib::Response& res, int status, const std::string& message, const std::string& detail) {
    res.status = status;
    res.set_content(json{{"code", status}, {"message", message}, {"detail", detail}}.dump(), "application/json");
}

void send_json(httplib::Response& res, const std::string& text, int status = 200) {
    res.status = status;
    res.set_content(text, "application/json");
}

json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw validation_error("request body is not valid JSON", e.what());
    }
}

std::optional<std::string> opt_param(const httplib::Request& req, const std::string& name) {
    if (!req.has_param(name)) return std::nullopt;
    auto v = req.get_param_value(name);
    if (v.empty()) return std::nullopt;
    return v;
}

template <typename T>
T number_param(const httplib::Request& req, const std::string& name, T fallback) {
    const auto v = opt_param(req, name);
    if (!v) return fallback;
    try {
        std::size_t used = 0;
        T out;
        if constexpr (std::is_floating_point_v<T>) {
            out = static_cast<T>(std::stod(*v, &used));
        } else if constexpr (std::is_unsigned_v<T>) {
            out = static_cast<T>(std::stoull(*v, &used));
        } else {
            out = static_cast<T>(std::stoll(*v, &used));
        }
        if (used != v->size()) throw std::invalid_argument(name);
        return out;
    } catch (const std::exception&) {
        throw validation_error("query parameter '" + name + "' is not a number", *v);
    }
}

template <typename T>
std::optional<T> opt_number(const httplib::Request& req, const std::string& name) {
    if (!opt_param(req, name)) return std::nullopt;
    return number_param<T>(req, name, T{});
}

std::vector<Split> parse_splits(const std::string& text) {
    std::vector<Split> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = text.find(',', start);
        const auto piece = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
        if (!piece.empty()) out.push_back(parse_split(piece));
        if (end == std::string::npos) break;
        start = end + 1;
    }
    return out;
}

ProjectionQuery projection_query(const httplib::Request& req, const json& body = json::object()) {
    ProjectionQuery q;
    auto get = [&](const std::string& k) -> std::optional<std::string> {
        if (body.contains(k)) return body[k].is_string() ? body[k].get<std::string>() : body[k].dump();
        return opt_param(req, k);
    };
    q.checkpoint = get("checkpoint");
    if (auto s = get("splits")) q.splits = parse_splits(*s);
    try {
        if (auto p = get("perplexity")) q.perplexity = std::stod(*p);
        if (auto s = get("seed")) q.seed = std::stoull(*s);
        if (auto i = get("iterations")) q.iterations = std::stoi(*i);
    } catch (const std::exception&) {
        throw validation_error("projection parameters must be numeric");
    }
    return q;
}

PairQuery pair_query(const httplib::Request& req) {
    PairQuery q;
    q.cid_a = opt_param(req, "cid_a");
    q.cid_b = opt_param(req, "cid_b");
    if (auto s = opt_param(req, "split")) q.split = parse_split(*s);
    return q;
}

template <typename T>
T body_get(const json& body, const std::string& key) {
    if (!body.contains(key)) throw validation_error("missing field '" + key + "'");
    try {
        return body[key].get<T>();
    } catch (const json::exception& e) {
        throw validation_error("field '" + key + "' has the wrong type", e.what());
    }
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
        try {
            h(req, res);
        } catch (const Error& e) {
            send_error(res, http_status(e.kind()), e.what(), e.detail());
        } catch (const json::exception& e) {
            send_error(res, 422, "invalid request", e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal error", e.what());
        }
    };
}

}  // namespace

ApiServer::ApiServer(SessionService& service) : service_(service), http_(std::make_unique<httplib::Server>()) {
    install_routes();
}

ApiServer::~ApiServer() { stop(); }

bool ApiServer::listen(const std::string& host, int port) { return http_->listen(host, port); }
int ApiServer::bind_any_port(const std::string& host) { return http_->bind_to_any_port(host); }
bool ApiServer::serve() { return http_->listen_after_bind(); }
void ApiServer::stop() {
    if (http_) http_->stop();
}
bool ApiServer::running() const { return http_->is_running(); }
void ApiServer::wait_until_ready() const { http_->wait_until_ready(); }

void ApiServer::install_routes() {
    auto& s = service_;
    auto& h = *http_;
    const std::string base = "/api/v1";
    const std::string sess = base + R"(/sessions/([A-Za-z0-9_-]+))";

    h.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "no such route" : "request failed", "");
    });

    h.Get(base + "/health", guarded([](const httplib::Request&, httplib::Response& res) {
        send_json(res, R"({"status":"ok"})");
    }));

    h.Post(base + "/sessions", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.create_session(parse_create_session(body_json(req))).dump(), 201);
    }));
    h.Get(base + "/sessions", guarded([&s](const httplib::Request&, httplib::Response& res) {
        send_json(res, json{{"sessions", s.session_ids()}}.dump());
    }));
    h.Get(sess, guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.get_session(req.matches[1]).dump());
    }));

    h.Post(sess + "/train", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const json body = body_json(req);
        const TrainConfig cfg = body.value("config", body).get<TrainConfig>();
        send_json(res, json(s.start_training(req.matches[1], cfg, body.value("warm_start", true))).dump(), 202);
    }));
    h.Get(base + R"(/jobs/([A-Za-z0-9_-]+))", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, json(s.get_job(req.matches[1])).dump());
    }));
    h.Get(base + R"(/jobs/([A-Za-z0-9_-]+)/events)", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        s.get_job(id);  // 404 before streaming starts
        auto seen = std::make_shared<std::size_t>(0);
        auto done = std::make_shared<bool>(false);
        res.set_chunked_content_provider("text/event-stream", [&s, id, seen, done](std::size_t, httplib::DataSink& sink) {
            if (*done) {
                sink.done();
                return true;
            }
            const auto snap = s.wait_job(id, *seen, std::chrono::seconds(15));
            std::string out;
            for (; *seen < snap.losses.size(); ++*seen) {
                json ev = json(snap)["losses"][*seen];
                ev["epoch"] = *seen + 1;
                out += "event: epoch\ndata: " + ev.dump() + "\n\n";
            }
            if (snap.terminal()) {
                out += "event: " + std::string(to_string(snap.state)) + "\ndata: " + json(snap).dump() + "\n\n";
                *done = true;
            } else if (out.empty()) {
                out = ": keep-alive\n\n";
            }
            return sink.write(out.data(), out.size());
        });
    }));

    h.Post(sess + R"(/checkpoints/([A-Za-z0-9_-]+)/activate)",
           guarded([&s](const httplib::Request& req, httplib::Response& res) {
               send_json(res, s.activate(req.matches[1], req.matches[2]).dump());
           }));
    h.Delete(sess + R"(/checkpoints/([A-Za-z0-9_-]+))", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.discard(req.matches[1], req.matches[2]).dump());
    }));

    h.Get(sess + "/predictions", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const Split split = parse_split(opt_param(req, "split").value_or("test"));
        send_json(res, s.predictions(req.matches[1], split, opt_param(req, "checkpoint")));
    }));
    h.Get(sess + "/confusion", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const Split split = parse_split(opt_param(req, "split").value_or("test"));
        send_json(res, s.confusion(req.matches[1], split, opt_param(req, "checkpoint")));
    }));
    h.Get(sess + "/projection", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.projection(req.matches[1], projection_query(req)));
    }));
    h.Get(sess + "/density", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.density(req.matches[1], projection_query(req), number_param<int>(req, "resolution", 64)));
    }));
    h.Post(sess + "/lasso", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const json body = body_json(req);
        std::vector<Point2> poly;
        for (const auto& p : body_get<json>(body, "polygon")) {
            if (!p.is_array() || p.size() != 2) throw validation_error("polygon vertices must be [x, y] pairs");
            poly.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        json q = body;
        q.erase("polygon");
        send_json(res, s.lasso(req.matches[1], projection_query(req, q), poly));
    }));
    h.Get(sess + "/gradcam", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const auto image = opt_param(req, "image");
        if (!image) throw validation_error("missing query parameter 'image'");
        send_json(res, s.gradcam(req.matches[1], *image, opt_number<int>(req, "class"), opt_param(req, "checkpoint"),
                                 number_param<double>(req, "alpha", 0.5)));
    }));

    h.Post(sess + "/clusters", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const json body = body_json(req);
        const Split split = parse_split(body.value("split", std::string("train")));
        send_json(res, s.clusters(req.matches[1], body_get<int>(body, "k"), body.value("seed", std::uint64_t{0}), split));
    }));
    h.Get(sess + R"(/clusters/(\d+)/representatives)", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.representatives(req.matches[1], std::stoi(req.matches[2]), number_param<int>(req, "n", 5)));
    }));
    h.Post(sess + "/translate", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const json body = body_json(req);
        std::optional<int> k;
        if (body.contains("k")) k = body_get<int>(body, "k");
        send_json(res, s.translate(req.matches[1], body_get<std::vector<std::string>>(body, "source_ids"),
                                   body_get<int>(body, "cluster"), body.value("count", 1), k));
    }));
    h.Get(sess + "/pending", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.pending(req.matches[1]));
    }));
    h.Post(sess + "/augment", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const json body = body_json(req);
        std::optional<int> label;
        if (body.contains("label") && !body["label"].is_null()) label = body_get<int>(body, "label");
        send_json(res, s.augment(req.matches[1], body_get<std::vector<std::string>>(body, "ids"), label));
    }));

    h.Get(sess + "/mosaic", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.mosaic(req.matches[1], pair_query(req), number_param<double>(req, "min_cell", 0.01),
                                number_param<double>(req, "gutter", 0.005)));
    }));
    h.Get(sess + "/trace", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.trace(req.matches[1], pair_query(req)));
    }));
    h.Get(sess + "/frequent", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        const Split split = parse_split(opt_param(req, "split").value_or("test"));
        send_json(res, s.frequent(req.matches[1], number_param<double>(req, "threshold", 0.5), split));
    }));
    h.Get(sess + "/history", guarded([&s](const httplib::Request& req, httplib::Response& res) {
        send_json(res, s.history(req.matches[1]));
    }));
}

}  // namespace dash
