class LeakageDetected(ValueError):
    """생성된 쿼리에 자산을 특정하는 이름/코드/URL 이 들어감"""

    def __init__(self, message, token=''):
        super().__init__(message)
        self.token = token


class Unresolvable(RuntimeError):
    """검증-수정 루프가 max_rounds 안에 끝나지 않음"""

    def __init__(self, message, query='', rationale='', rounds=0):
        super().__init__(message)
        self.query = query
        self.rationale = rationale
        self.rounds = rounds
