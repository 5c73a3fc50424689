import logging

import apprise

log = logging.getLogger('apprise')


class Apprise:
    NAME = "Apprise"

    def __init__(self, url, title='CoDAIL lab'):
        self.url = url
        self.title = title
        log.debug("Initialized Apprise notification agent")

    def send(self, **kwargs):
        if not self.url:
            log.error("You must specify a URL when initializing this class")
            return False

        # send notification
        try:
            apobj = apprise.Apprise()
            apobj.add(self.url)
            return bool(apobj.notify(
                title=kwargs.get('title', self.title),
                body=kwargs['message'],
            ))

        except Exception:
            log.exception(f"Error sending notification to {self.url}")
        return False
