#pragma once

#include "fr/service.hpp"

#include <httplib.h>

namespace fr {

// Registers the JSON routes of `svc` on `srv`. `svc` must outlive the server.
void mount_routes(httplib::Server& srv, Service& svc);

}  // namespace fr
