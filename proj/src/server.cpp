#include "fr/server.hpp"

namespace fr {

namespace {

void send_json(httplib::Response& res, const Json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, const std::string& code, const std::string& message) {
    send_json(res, error_json(code, message), http_status(code));
}

// Runs a handler and maps exceptions to JSON errors.
template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        send_error(res, e.code(), e.what());
    } catch (const ContractViolation& e) {
        send_error(res, "invalid_argument", e.what());
    } catch (const std::exception& e) {
        send_error(res, "internal", e.what());
    }
}

// Image bytes from a multipart field "image", or the raw body.
std::string upload(const httplib::Request& req) {
    if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) throw Error("invalid_field", "multipart field 'image' is required");
        return req.get_file_value("image").content;
    }
    if (req.body.empty()) throw Error("invalid_field", "request carries no image");
    return req.body;
}

}  // namespace

void mount_routes(httplib::Server& srv, Service& svc) {
    srv.Get("/attributes", [&](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc.attributes()); });
    });
    srv.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc.create_session(upload(req)), 201); });
    });
    srv.Post(R"(/sessions/([^/]+)/edit)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            Json body;
            try {
                body = Json::parse(req.body);
            } catch (const Json::exception& e) {
                throw Error("malformed_json", std::string("edit body is not JSON: ") + e.what());
            }
            send_json(res, svc.edit(req.matches[1], body));
        });
    });
    srv.Post(R"(/sessions/([^/]+)/reenact)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc.reenact(req.matches[1], upload(req))); });
    });
    srv.Post(R"(/sessions/([^/]+)/tune)", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc.tune(req.matches[1])); });
    });
    srv.Delete(R"(/sessions/([^/]+))", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            svc.delete_session(req.matches[1]);
            send_json(res, {{"deleted", std::string(req.matches[1])}});
        });
    });
    srv.Get(R"(/images/([0-9a-f]+))", [&](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto png = svc.image_png(req.matches[1]);
            if (!png) throw Error("not_found", "unknown image '" + std::string(req.matches[1]) + "'");
            res.set_content(*png, "image/png");
        });
    });
    srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty()) {
            const std::string code = res.status == 404 ? "not_found" : "http_error";
            res.set_content(error_json(code, "no route for " + req.method + " " + req.path).dump(),
                            "application/json");
        }
    });
}

}  // namespace fr
