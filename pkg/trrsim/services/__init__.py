# Service layer over the results store
