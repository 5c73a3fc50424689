import logging

from .apprise import Apprise

log = logging.getLogger("notifications")

SERVICES = {
    'apprise': Apprise
}


class Notifications:
    def __init__(self):
        self.services = []

    def load(self, **kwargs):
        if 'service' not in kwargs:
            log.error("You must specify a service to load with the service parameter")
            return False
        elif kwargs['service'] not in SERVICES:
            log.error(f"You specified an invalid service to load: {kwargs['service']}")
            return False

        try:
            chosen_service = SERVICES[kwargs.pop('service')]

            # load service
            service = chosen_service(**kwargs)
            self.services.append(service)
            return True

        except Exception:
            log.exception(f"Exception while loading service, kwargs={kwargs!r}: ")
        return False

    def load_all(self, entries):
        """Load every entry of the `notifications` config section."""
        for name, entry in entries.items():
            if not self.load(**entry):
                log.warning(f"Skipped notification agent {name}")
        return self

    def send(self, **kwargs):
        try:
            # remove service keyword if supplied
            chosen_service = kwargs.pop('service', None)
            chosen_service = chosen_service.lower() if chosen_service else None

            # send notification(s)
            for service in self.services:
                if chosen_service and service.NAME.lower() != chosen_service:
                    continue
                elif service.send(**kwargs):
                    log.info(f"Sent notification with {service.NAME}")
        except Exception:
            log.exception(f"Exception sending notification, kwargs={kwargs!r}: ")
