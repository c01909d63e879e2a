#pragma once

#include <memory>
#include <string>

#include "dash/error.hpp"
#include "dash/session.hpp"

namespace httplib {
class Server;
}

namespace dash {

/// HTTP+JSON adapter over SessionService; every route lives under /api/v1.
/// Errors are returned as {code, message, detail} with code = HTTP status.
class ApiServer {
public:
    explicit ApiServer(SessionService& service);
    ~ApiServer();

    /// Binds and serves on the calling thread until stop().
    bool listen(const std::string& host, int port);
    /// Binds to an ephemeral port and returns it; call serve() afterwards.
    int bind_any_port(const std::string& host);
    bool serve();
    void stop();
    bool running() const;
    void wait_until_ready() const;

private:
    void install_routes();

    SessionService& service_;
    std::unique_ptr<httplib::Server> http_;
};

int http_status(ErrorKind kind);

}  // namespace dash
